use std::path::{Path, PathBuf};
use std::time::Instant;

use relfp_core::config::{KeyValues, LyapunovChoice, RunConfig};
use relfp_core::equilibrium::build_equilibrium;
use relfp_core::experiments::*;
use relfp_core::functionals::DiagnosticsRecord;
use relfp_core::matrix_checks::{verify_matrices, MatrixCheckReport, IDENTITY_TOL, MARGIN_TOL};
use relfp_core::operators::Operators;
use relfp_core::report::{
    self, q, write_checkpoint, write_csv, write_diagnostics_csv, CheckpointHeader, Provenance,
};
use relfp_core::solver::{run_on, to_absolute, SimulationConfig, TrajectoryRecord};
use relfp_core::{Error, Result};
use serde_json::{json, Map, Value};

use crate::Command;

pub const DEFAULT_SEED: u64 = 7;
const MASS_TOL: f64 = 1e-9;

pub struct Outcome {
    pub summary: Value,
    pub passed: bool,
    /// where the summary goes when it is not `<out>/<command>.json`
    pub json_path: Option<PathBuf>,
}

impl Outcome {
    fn new(summary: Value, passed: bool) -> Self {
        Outcome {
            summary,
            passed,
            json_path: None,
        }
    }
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Simulate { config, set, out } => simulate(config.as_deref(), &set, out.out),
        Command::Homogeneous {
            c,
            np,
            p_shift,
            out,
        } => homogeneous(c, np, p_shift, out.out.as_deref()),
        Command::Constants {
            potential,
            c,
            nx,
            np,
            ..
        } => constants(&potential, c, nx, np),
        Command::VerifyMatrices {
            d,
            potential,
            samples,
            cert_samples,
            t0,
            seed,
            ..
        } => matrices(&d, &potential, samples, cert_samples, t0, seed),
        Command::EllipticVerify {
            potential,
            nx,
            basis,
            samples,
            seed,
            ..
        } => elliptic(&potential, nx, basis, samples, seed),
        Command::NewtonianLimit {
            c_grid,
            eigen_nodes,
            no_eigen,
            out,
        } => newtonian(
            &c_grid,
            (!no_eigen).then_some(eigen_nodes),
            out.out.as_deref(),
        ),
        Command::Hypoelliptic {
            t0,
            potential,
            nx,
            np,
            dt,
            seed,
            out,
        } => hypo(t0, &potential, nx, np, dt, seed, out.out.as_deref()),
        Command::Report { out } => merge(&out),
    }
}

fn potentials(names: &[String]) -> Result<Vec<relfp_core::PotentialSpec>> {
    names.iter().map(|n| potential_by_name(n.trim())).collect()
}

fn diagnostics_json(d: &DiagnosticsRecord) -> Value {
    let mut m = Map::new();
    for (name, v) in DiagnosticsRecord::COLUMNS.iter().zip(d.values()) {
        let v = if *name == "t" {
            json!(v)
        } else {
            q(v, Provenance::Measured)
        };
        m.insert((*name).into(), v);
    }
    Value::Object(m)
}

fn monotone_json(checks: &[MonotoneCheck]) -> Value {
    use Provenance::Measured;
    checks
        .iter()
        .map(|m| {
            json!({
                "column": m.column,
                "initial": q(m.initial, Measured),
                "last": q(m.last, Measured),
                "worst_relative_increase": q(m.worst_relative_increase, Measured),
                "passed": m.passed,
            })
        })
        .collect()
}

fn max_mass_error(rec: &TrajectoryRecord) -> f64 {
    rec.diagnostics
        .iter()
        .map(|d| (d.mass - 1.0).abs())
        .fold(0.0, f64::max)
}

fn csv_in(dir: Option<&Path>, name: &str, rec: &TrajectoryRecord) -> Result<Option<PathBuf>> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            write_diagnostics_csv(&path, &rec.diagnostics)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}

fn simulate(config: Option<&Path>, set: &[String], out: Option<PathBuf>) -> Result<Outcome> {
    let start = Instant::now();
    let mut text = match config {
        Some(p) => report::read_text(p)?,
        None => String::new(),
    };
    let mut kv = KeyValues::parse(&text)?;
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {s:?}: expected KEY=VALUE")))?;
        kv.set(k.trim(), v.trim());
        text.push_str(&format!("\n{} = {}", k.trim(), v.trim()));
    }
    let cfg = RunConfig::from_kv(&kv, &text)?;
    let v = &cfg.potential;
    let grid = cfg.grid.build(v, cfg.light_speed)?;
    let eq = build_equilibrium(&grid, v, cfg.light_speed)?;
    let ops = Operators::new(&eq, cfg.solver.flux, cfg.solver.transport);

    let (lyapunov, delta0) = match &cfg.lyapunov {
        LyapunovChoice::Off => (None, None),
        LyapunovChoice::Certified => {
            let hc = constants_for(&eq)?;
            (
                Some(certified_lyapunov(v, hc.delta0, cfg.seed)?.0),
                Some(hc.delta0),
            )
        }
        LyapunovChoice::Fixed(_) => {
            let hc = constants_for(&eq)?;
            (cfg.lyapunov_with(hc.delta0)?, Some(hc.delta0))
        }
    };
    let sim = SimulationConfig {
        solver: cfg.solver.clone(),
        lyapunov,
    };
    let (rec, h) = run_on(&sim, &eq, &ops)?;

    let dir = out.or_else(|| cfg.output.dir.clone());
    let csv = cfg
        .output
        .csv
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join("simulate.csv")));
    let ckpt = cfg
        .output
        .checkpoint
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join("final.ckpt")));
    if let Some(p) = &csv {
        write_diagnostics_csv(p, &rec.diagnostics)?;
    }
    if let Some(p) = &ckpt {
        let t = rec.times.last().copied().unwrap_or(0.0);
        write_checkpoint(
            p,
            &CheckpointHeader::for_grid(&eq.grid, t, &cfg.hash()),
            &to_absolute(&h, &eq).values,
        )?;
    }

    let mut columns = vec!["l2", "entropy"];
    if lyapunov.is_some() {
        columns.extend(["h_delta", "e_func"]);
    }
    let monotone = monotone_checks(&rec, &columns, rec.meta.dt)?;
    let mass_err = max_mass_error(&rec);
    let mass_passed = mass_err <= MASS_TOL;
    let monotone_passed = monotone.iter().all(|m| m.passed);
    let last = rec.diagnostics.last().copied().unwrap_or_default();
    use Provenance::*;
    let summary = json!({
        "config": {
            "file": config.map(|p| p.display().to_string()),
            "hash": cfg.hash(),
            "potential": v.name(),
            "grid": [eq.grid.nx(), eq.grid.np()],
            "x_radius": eq.grid.x.truncation_radius,
            "p_radius": eq.grid.p.truncation_radius,
            "light_speed": cfg.light_speed,
            "dt": rec.meta.dt,
            "steps": rec.meta.steps,
            "t_final": cfg.solver.t_final,
            "splitting": cfg.solver.splitting,
            "flux": format!("{:?}", cfg.solver.flux),
            "transport": format!("{:?}", cfg.solver.transport),
            "initial_condition": rec.meta.initial_condition,
            "seed": cfg.seed,
        },
        "lyapunov": lyapunov.map(|l| json!({
            "delta": q(l.delta, Formula),
            "gamma": q(l.gamma, CertifiedSampled),
            "epsilon": q(l.epsilon, CertifiedSampled),
            "eta": l.eta,
        })),
        "delta0": delta0.map(|d| q(d, Formula)),
        "final": diagnostics_json(&last),
        "max_mass_error": q(mass_err, Measured),
        "max_mass_drift": q(rec.meta.max_mass_drift, Measured),
        "monotone": monotone_json(&monotone),
        "stability": rec.meta.stability,
        "clip": rec.meta.clip,
        "files": {
            "csv": csv.map(|p| p.display().to_string()),
            "checkpoint": ckpt.map(|p| p.display().to_string()),
        },
        "runtime_s": start.elapsed().as_secs_f64(),
        "mass_passed": mass_passed,
        "monotone_passed": monotone_passed,
    });
    Ok(Outcome {
        summary,
        passed: mass_passed && monotone_passed,
        json_path: cfg
            .output
            .json
            .clone()
            .or_else(|| dir.map(|d| d.join("simulate.json"))),
    })
}

fn homogeneous(c: f64, np: usize, p_shift: f64, out: Option<&Path>) -> Result<Outcome> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("--c {c} must be positive")));
    }
    let (r, rec) = homogeneous_gap(c, np, p_shift)?;
    let csv = csv_in(out, "homogeneous.csv", &rec)?;
    let monotone = monotone_checks(&rec, &["l2", "entropy"], rec.meta.dt)?;
    let mass_err = max_mass_error(&rec);
    let passed = r.matches_gap
        && r.above_bakry_emery.unwrap_or(true)
        && mass_err <= MASS_TOL
        && monotone.iter().all(|m| m.passed);
    let mut summary = r.to_json();
    summary["p_shift"] = json!(p_shift);
    summary["dt"] = json!(rec.meta.dt);
    summary["steps"] = json!(rec.meta.steps);
    summary["max_mass_error"] = q(mass_err, Provenance::Measured);
    summary["monotone"] = monotone_json(&monotone);
    summary["files"] = json!({"csv": csv.map(|p| p.display().to_string())});
    Ok(Outcome::new(summary, passed))
}

fn constants(names: &[String], c: f64, nx: usize, np: usize) -> Result<Outcome> {
    let mut passed = true;
    let mut reports = Vec::new();
    for v in potentials(names)? {
        let eq = standard_equilibrium(&v, nx, np, c)?;
        let hc = constants_for(&eq)?;
        let ac = assumption_for(&eq)?;
        passed &= [hc.kappa1, hc.kappa2, hc.lambda_big_m, hc.delta0]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
        let mut j = constants_json(&v, c, &hc, &ac);
        j["grid"] = json!([nx, np]);
        reports.push(j);
    }
    Ok(Outcome::new(json!({"potentials": reports}), passed))
}

fn matrix_report_json(r: &MatrixCheckReport) -> Value {
    use Provenance::*;
    let found: Map<String, Value> = r
        .found_constants
        .iter()
        .map(|(k, v)| (k.clone(), q(*v, CertifiedSampled)))
        .collect();
    json!({
        "lemma": r.lemma_id,
        "d": r.d,
        "samples": r.samples,
        "max_identity_residual": q(r.max_identity_residual, Measured),
        "min_eigen_margin": q(r.min_eigen_margin, Measured),
        "failures": r.failures,
        "found_constants": found,
        "status": r.status,
        "caveat": r.caveat,
    })
}

fn matrices(
    ds: &[usize],
    names: &[String],
    samples: usize,
    cert_samples: usize,
    t0: f64,
    seed: u64,
) -> Result<Outcome> {
    if ds.contains(&0) {
        return Err(Error::Config("--d values must be at least 1".into()));
    }
    let mut passed = true;
    let mut lemmas = Vec::new();
    for &d in ds {
        for r in verify_matrices(d, samples, seed)? {
            passed &= r.passed()
                && r.max_identity_residual <= IDENTITY_TOL
                && r.min_eigen_margin >= -MARGIN_TOL;
            lemmas.push(matrix_report_json(&r));
        }
    }
    let mut certs = Vec::new();
    for v in potentials(names)? {
        let r = certification_suite(&v, t0, cert_samples, seed)?;
        passed &= r.passed;
        certs.push(r.to_json());
    }
    Ok(Outcome::new(
        json!({"seed": seed, "samples": samples, "lemmas": lemmas, "certificates": certs}),
        passed,
    ))
}

fn elliptic(
    names: &[String],
    nx: usize,
    basis: usize,
    samples: usize,
    seed: u64,
) -> Result<Outcome> {
    let mut passed = true;
    let mut reports = Vec::new();
    for v in potentials(names)? {
        let r = elliptic_suite(&v, nx, basis, samples, seed)?;
        passed &= r.passed;
        reports.push(r.to_json());
    }
    Ok(Outcome::new(
        json!({"seed": seed, "potentials": reports}),
        passed,
    ))
}

fn newtonian(spec: &str, nodes: Option<usize>, out: Option<&Path>) -> Result<Outcome> {
    let cs = parse_c_grid(spec)?;
    let rows = newtonian_limit(&cs, nodes)?;
    let s = newtonian_summary(&rows)?;
    let csv = match out {
        Some(d) => {
            let path = d.join("newtonian_limit.csv");
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.c, r.formula, r.eigensolver.unwrap_or(f64::NAN), r.deficit])
                .collect();
            write_csv(
                &path,
                &[
                    "c",
                    "kappa1_formula",
                    "kappa1_eigensolver",
                    "kappa1_deficit",
                ],
                &table,
            )?;
            Some(path)
        }
        None => None,
    };
    use Provenance::*;
    let table: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "c": r.c,
                "kappa1_formula": q(r.formula, Formula),
                "kappa1_deficit": q(r.deficit, Formula),
                "kappa1_eigensolver": r.eigensolver.map(|e| q(e, Measured)),
            })
        })
        .collect();
    let passed = s.strictly_increasing && s.formula_above_eigen.is_empty();
    Ok(Outcome::new(
        json!({
            "c_grid": spec,
            "eigen_nodes": nodes,
            "kappa1_at_2": q(s.at_two, Formula),
            "kappa1_at_end": q(s.at_end, Formula),
            "strictly_increasing": s.strictly_increasing,
            "formula_above_eigensolver_at": s.formula_above_eigen,
            "rows": table,
            "files": {"csv": csv.map(|p| p.display().to_string())},
        }),
        passed,
    ))
}

fn hypo(
    t0: f64,
    name: &str,
    nx: usize,
    np: usize,
    dt: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<Outcome> {
    let v = potential_by_name(name)?;
    let (r, rec) = hypoelliptic(&v, t0, nx, np, dt, seed)?;
    let csv = csv_in(out, "hypoelliptic.csv", &rec)?;
    let mut summary = r.to_json();
    summary["seed"] = json!(seed);
    summary["files"] = json!({"csv": csv.map(|p| p.display().to_string())});
    Ok(Outcome::new(summary, r.slopes_passed && r.bounds_passed))
}

fn merge(dir: &Path) -> Result<Outcome> {
    let merged = report::merge_summaries(dir)?;
    let failing: Vec<String> = merged
        .as_object()
        .map(|m| {
            m.iter()
                .filter(|(_, v)| {
                    v.get("status")
                        .and_then(Value::as_str)
                        .is_some_and(|s| s != "ok")
                })
                .map(|(k, _)| k.clone())
                .collect()
        })
        .unwrap_or_default();
    let passed = failing.is_empty();
    Ok(Outcome {
        summary: json!({"directory": dir.display().to_string(), "failing": failing, "summaries": merged}),
        passed,
        json_path: Some(dir.join("report.json")),
    })
}
