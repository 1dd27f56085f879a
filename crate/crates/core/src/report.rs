//! Output plumbing: diagnostics CSV, provenance-tagged JSON numbers and
//! field checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::functionals::DiagnosticsRecord;
use crate::grid::PhaseGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// read off a simulation or a discrete eigenproblem
    Measured,
    /// closed-form expression evaluated at the inputs
    Formula,
    /// regression on measured data
    Fitted,
    /// sup/inf over a finite sample set, not a proof
    CertifiedSampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub provenance: Provenance,
}

pub fn measured(value: f64) -> Quantity {
    Quantity {
        value,
        provenance: Provenance::Measured,
    }
}
pub fn formula(value: f64) -> Quantity {
    Quantity {
        value,
        provenance: Provenance::Formula,
    }
}
pub fn fitted(value: f64) -> Quantity {
    Quantity {
        value,
        provenance: Provenance::Fitted,
    }
}
pub fn sampled(value: f64) -> Quantity {
    Quantity {
        value,
        provenance: Provenance::CertifiedSampled,
    }
}

/// JSON for a tagged number; non-finite values become null.
pub fn q(value: f64, provenance: Provenance) -> Value {
    let v = if value.is_finite() {
        json!(value)
    } else {
        Value::Null
    };
    json!({ "value": v, "provenance": provenance })
}

/// 17 significant digits: round-trips exactly, so reruns give identical bytes.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "nan".into()
    }
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn timestamp_line() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# generated unix={secs}")
}

/// CSV body (header and rows) for diagnostics; everything after the first
/// timestamp line is deterministic.
pub fn diagnostics_csv_body(records: &[DiagnosticsRecord]) -> String {
    let mut s = DiagnosticsRecord::COLUMNS.join(",");
    s.push('\n');
    for r in records {
        let row: Vec<String> = r.values().iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = timestamp_line();
    s.push('\n');
    s.push_str(&csv_body(header, rows));
    write_file(path, s.as_bytes())
}

pub fn csv_body(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let row: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut s = timestamp_line();
    s.push('\n');
    s.push_str(&diagnostics_csv_body(records));
    write_file(path, s.as_bytes())
}

/// Reads a CSV written by this module (timestamp line optional).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty csv", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Io(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if row.len() != header.len() {
            return Err(Error::Io(format!(
                "{} row {}: {} fields, header has {}",
                path.display(),
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

const MAGIC: &str = "relfp-checkpoint v1";
const END: &str = "END_HEADER";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub nx: usize,
    pub np: usize,
    pub x_radius: f64,
    pub p_radius: f64,
    pub time: f64,
    pub config_hash: String,
}

impl CheckpointHeader {
    pub fn for_grid(grid: &PhaseGrid, time: f64, config_hash: &str) -> Self {
        CheckpointHeader {
            nx: grid.x.len(),
            np: grid.p.len(),
            x_radius: grid.x.truncation_radius,
            p_radius: grid.p.truncation_radius,
            time,
            config_hash: config_hash.into(),
        }
    }

    fn matches(&self, grid: &PhaseGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        self.nx == grid.x.len()
            && self.np == grid.p.len()
            && close(self.x_radius, grid.x.truncation_radius)
            && close(self.p_radius, grid.p.truncation_radius)
    }
}

/// Text header, then nx·np little-endian f64 values.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, values: &[f64]) -> Result<()> {
    if values.len() != header.nx * header.np {
        return Err(Error::Dimension(format!(
            "checkpoint holds {} values for {}x{}",
            values.len(),
            header.nx,
            header.np
        )));
    }
    let mut text = String::new();
    let _ = writeln!(text, "{MAGIC}");
    let _ = writeln!(text, "nx={}", header.nx);
    let _ = writeln!(text, "np={}", header.np);
    let _ = writeln!(text, "x_radius={}", fmt_f64(header.x_radius));
    let _ = writeln!(text, "p_radius={}", fmt_f64(header.p_radius));
    let _ = writeln!(text, "time={}", fmt_f64(header.time));
    let _ = writeln!(text, "config_hash={}", header.config_hash);
    let _ = writeln!(text, "{END}");
    let mut bytes = text.into_bytes();
    bytes.reserve(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_checkpoint(&bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<(CheckpointHeader, Vec<f64>), String> {
    let marker = format!("\n{END}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or("missing END_HEADER")?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err("not a checkpoint".into());
    }
    let mut kv = std::collections::HashMap::new();
    for l in lines {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| format!("bad header line {l:?}"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| format!("header lacks {k}"))
    };
    let num = |k: &str| -> std::result::Result<f64, String> {
        get(k)?.parse::<f64>().map_err(|e| format!("{k}: {e}"))
    };
    let int = |k: &str| -> std::result::Result<usize, String> {
        get(k)?.parse::<usize>().map_err(|e| format!("{k}: {e}"))
    };
    let header = CheckpointHeader {
        nx: int("nx")?,
        np: int("np")?,
        x_radius: num("x_radius")?,
        p_radius: num("p_radius")?,
        time: num("time")?,
        config_hash: get("config_hash")?,
    };
    let data = &bytes[end + marker.len()..];
    let n = header.nx * header.np;
    if data.len() != 8 * n {
        return Err(format!(
            "expected {} data bytes, found {}",
            8 * n,
            data.len()
        ));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Absolute density for the grid of `eq`, from a checkpoint or from a
/// whitespace/comma separated text file.
pub fn read_field_file(path: &Path, eq: &EquilibriumState) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let values = if bytes.starts_with(MAGIC.as_bytes()) {
        let (header, values) =
            parse_checkpoint(&bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if !header.matches(&eq.grid) {
            return Err(Error::Dimension(format!(
                "{}: checkpoint grid {}x{} on [{}, {}] does not match the run",
                path.display(),
                header.nx,
                header.np,
                header.x_radius,
                header.p_radius
            )));
        }
        values
    } else {
        let text =
            String::from_utf8(bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| {
                l.split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
            })
            .map(str::parse::<f64>)
            .collect();
        parsed.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
    };
    if values.len() != eq.len() {
        return Err(Error::Dimension(format!(
            "{}: {} values, grid has {}",
            path.display(),
            values.len(),
            eq.len()
        )));
    }
    Ok(values)
}

/// Merges JSON summaries (`*.json`) in `dir` into one object keyed by file stem.
pub fn merge_summaries(dir: &Path) -> Result<Value> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| p.file_stem().is_some_and(|s| s != "report"))
        .collect();
    entries.sort();
    let mut out = Map::new();
    for p in entries {
        let v: Value = serde_json::from_str(&read_text(&p)?)
            .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        out.insert(
            p.file_stem().expect("stem").to_string_lossy().into_owned(),
            v,
        );
    }
    Ok(Value::Object(out))
}
