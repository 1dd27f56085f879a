//! Run configuration from a plain key=value file.
//!
//! ```text
//! # comment
//! seed = 7
//! light_speed = 1
//! [grid]
//! nx = 128
//! [solver]
//! dt = 0.01
//! ic = rough_indicator
//! ```
//!
//! A `[section]` line prefixes the keys below it (`solver.dt`); dotted keys
//! may also be written out in full. Values are bare, unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::equilibrium::{default_p_radius, default_x_radius};
use crate::error::{Error, Result};
use crate::experiments::potential_by_name;
use crate::functionals::LyapunovConfig;
use crate::grid::PhaseGrid;
use crate::operators::{FluxScheme, TransportScheme};
use crate::potentials::PotentialSpec;
use crate::solver::{InitialCondition, SolverConfig, Splitting};

/// Parsed file: full dotted key → (value, line number).
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::Config(format!("line {line_no}: unterminated section header"))
                    })?
                    .trim();
                if name.is_empty()
                    || !name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
                {
                    return Err(Error::Config(format!(
                        "line {line_no}: bad section name {name:?}"
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(Error::Config(format!("line {line_no}: bad key {key:?}")));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let value = value.trim().to_string();
            if let Some((_, first)) = entries.insert(full.clone(), (value, line_no)) {
                return Err(Error::Config(format!(
                    "line {line_no}: {full} already set on line {first}"
                )));
            }
        }
        Ok(KeyValues {
            entries,
            used: Default::default(),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.raw(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("{key} = {v:?} (line {line}): {e}"))),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// `auto` or absent gives None.
    pub fn get_auto<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.str(key) {
            None | Some("auto") => Ok(None),
            Some(_) => self.get(key),
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    /// Errors on keys no reader asked for.
    pub fn reject_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (_, line))| format!("{k} (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub np: usize,
    /// None: chosen from the potential / light speed so that the truncated
    /// tails of f∞ stay below the tolerance.
    pub x_radius: Option<f64>,
    pub p_radius: Option<f64>,
}

impl GridSpec {
    pub fn build(&self, v: &PotentialSpec, c: f64) -> Result<PhaseGrid> {
        let xr = self.x_radius.unwrap_or_else(|| default_x_radius(v));
        let pr = self.p_radius.unwrap_or_else(|| default_p_radius(c));
        PhaseGrid::uniform(xr, self.nx, pr, self.np)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LyapunovChoice {
    /// δ = δ₀/2, (γ, ε) from the P₁ certificate
    Certified,
    Fixed(LyapunovConfig),
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub potential: PotentialSpec,
    pub light_speed: f64,
    pub solver: SolverConfig,
    pub lyapunov: LyapunovChoice,
    pub output: OutputSpec,
    pub seed: u64,
    /// source text, hashed into checkpoints
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec {
                nx: 128,
                np: 256,
                x_radius: None,
                p_radius: None,
            },
            potential: PotentialSpec::Harmonic,
            light_speed: 1.0,
            solver: SolverConfig::default(),
            lyapunov: LyapunovChoice::Certified,
            output: OutputSpec {
                dir: None,
                csv: None,
                json: None,
                checkpoint: None,
            },
            seed: 7,
            source: String::new(),
        }
    }
}

fn parse_enum<T>(kv: &KeyValues, key: &str, default: T, table: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    match kv.str(key) {
        None => Ok(default),
        Some(v) => table
            .iter()
            .find(|(n, _)| *n == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
                Error::Config(format!(
                    "{key} = {v:?}: expected one of {}",
                    names.join(", ")
                ))
            }),
    }
}

fn potential_from(kv: &KeyValues) -> Result<PotentialSpec> {
    let kind = kv.str("potential.kind").unwrap_or("harmonic");
    let v = match kind {
        "even_power" | "even-power" => PotentialSpec::EvenPower {
            r: kv.get_or("potential.r", 0.25)?,
            k: kv.get_or("potential.k", 2)?,
        },
        "double-well" | "double_well" => PotentialSpec::DoubleWell {
            a: kv.get_or("potential.a", 1.0)?,
            b: kv.get_or("potential.b", 1.0)?,
        },
        "polynomial" => {
            let raw = kv.str("potential.coeffs").ok_or_else(|| {
                Error::Config("potential.coeffs is required for polynomial".into())
            })?;
            let coeffs = raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("potential.coeffs: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            PotentialSpec::Polynomial { coeffs }
        }
        other => potential_by_name(other)?,
    };
    v.validate()?;
    Ok(v)
}

fn ic_from(kv: &KeyValues) -> Result<InitialCondition> {
    Ok(match kv.str("solver.ic").unwrap_or("shifted_maxwellian") {
        "shifted_maxwellian" => InitialCondition::ShiftedMaxwellian {
            x0: kv.get_or("solver.ic_x0", 1.0)?,
            p_shift: kv.get_or("solver.ic_p_shift", 1.0)?,
        },
        "double_bump" => InitialCondition::DoubleBump,
        "rough_indicator" => InitialCondition::RoughIndicator {
            x_lo: kv.get_or("solver.ic_x_lo", -1.0)?,
            x_hi: kv.get_or("solver.ic_x_hi", 1.0)?,
            p_lo: kv.get_or("solver.ic_p_lo", -1.0)?,
            p_hi: kv.get_or("solver.ic_p_hi", 1.0)?,
        },
        "custom_file" => InitialCondition::CustomFile {
            path: kv
                .str("solver.ic_path")
                .map(PathBuf::from)
                .ok_or_else(|| Error::Config("solver.ic_path is required for custom_file".into()))?,
        },
        other => {
            return Err(Error::Config(format!(
                "solver.ic = {other:?}: expected shifted_maxwellian, double_bump, rough_indicator or custom_file"
            )))
        }
    })
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?, text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_kv(kv: &KeyValues, source: &str) -> Result<Self> {
        let d = RunConfig::default();
        let grid = GridSpec {
            nx: kv.get_or("grid.nx", d.grid.nx)?,
            np: kv.get_or("grid.np", d.grid.np)?,
            x_radius: kv.get_auto("grid.x_radius")?,
            p_radius: kv.get_auto("grid.p_radius")?,
        };
        let potential = potential_from(kv)?;
        let light_speed: f64 = kv.get_or("light_speed", d.light_speed)?;
        let ds = &d.solver;
        let solver = SolverConfig {
            dt: kv.get_or("solver.dt", ds.dt)?,
            t_final: kv.get_or("solver.t_final", ds.t_final)?,
            splitting: parse_enum(
                kv,
                "solver.splitting",
                ds.splitting,
                &[
                    ("lie", Splitting::Lie),
                    ("strang", Splitting::Strang),
                    ("imex", Splitting::Imex),
                ],
            )?,
            record_every: kv.get_or("solver.record_every", ds.record_every)?,
            initial_condition: ic_from(kv)?,
            flux: parse_enum(
                kv,
                "scheme.flux",
                ds.flux,
                &[
                    ("chang_cooper", FluxScheme::ChangCooper),
                    ("centered", FluxScheme::Centered),
                ],
            )?,
            transport: parse_enum(
                kv,
                "scheme.transport",
                ds.transport,
                &[
                    ("central", TransportScheme::Central),
                    ("upwind", TransportScheme::Upwind),
                ],
            )?,
            clip_negative: kv.get_or("solver.clip_negative", ds.clip_negative)?,
            geometric_records: kv.get_auto("solver.geometric_records")?,
        };
        let lyapunov = match kv.str("lyapunov.mode").unwrap_or("certified") {
            "certified" => LyapunovChoice::Certified,
            "off" => LyapunovChoice::Off,
            "fixed" => {
                let need = |k: &str| -> Result<f64> {
                    kv.get(k)?.ok_or_else(|| {
                        Error::Config(format!("{k} is required with lyapunov.mode = fixed"))
                    })
                };
                LyapunovChoice::Fixed(LyapunovConfig {
                    delta: need("lyapunov.delta")?,
                    gamma: need("lyapunov.gamma")?,
                    epsilon: need("lyapunov.epsilon")?,
                    eta: kv.get_or("lyapunov.eta", 0.5)?,
                })
            }
            other => {
                return Err(Error::Config(format!(
                    "lyapunov.mode = {other:?}: expected certified, fixed or off"
                )))
            }
        };
        let output = OutputSpec {
            dir: kv.str("output.dir").map(PathBuf::from),
            csv: kv.str("output.csv").map(PathBuf::from),
            json: kv.str("output.json").map(PathBuf::from),
            checkpoint: kv.str("output.checkpoint").map(PathBuf::from),
        };
        let seed = kv.get_or("seed", d.seed)?;
        kv.reject_unused()?;
        let cfg = RunConfig {
            grid,
            potential,
            light_speed,
            solver,
            lyapunov,
            output,
            seed,
            source: source.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no constants; δ < δ₀ is enforced once δ₀ is known.
    pub fn validate(&self) -> Result<()> {
        if self.grid.nx < 3 || self.grid.np < 3 {
            return Err(Error::Config(format!(
                "grid {}x{} is too small",
                self.grid.nx, self.grid.np
            )));
        }
        for (name, r) in [
            ("grid.x_radius", self.grid.x_radius),
            ("grid.p_radius", self.grid.p_radius),
        ] {
            if let Some(r) = r {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Config(format!("{name} = {r} must be positive")));
                }
            }
        }
        if !(self.light_speed > 0.0 && self.light_speed.is_finite()) {
            return Err(Error::Config(format!(
                "light_speed = {} must be positive",
                self.light_speed
            )));
        }
        self.solver.validate()?;
        if let LyapunovChoice::Fixed(l) = &self.lyapunov {
            l.validate(None)?;
        }
        Ok(())
    }

    pub fn lyapunov_with(&self, delta0: f64) -> Result<Option<LyapunovConfig>> {
        match &self.lyapunov {
            LyapunovChoice::Fixed(l) => {
                l.validate(Some(delta0))?;
                Ok(Some(*l))
            }
            _ => Ok(None),
        }
    }

    pub fn hash(&self) -> String {
        crate::report::config_hash(&self.source)
    }
}
