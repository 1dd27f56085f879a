use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn relfp(args: &[&str], threads: Option<&str>) -> (i32, Value, Output) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relfp"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("RELFP_THREADS", t),
        None => cmd.env_remove("RELFP_THREADS"),
    };
    let out = cmd.output().expect("spawn relfp");
    let json: Value = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    });
    (out.status.code().expect("exit code"), json, out)
}

fn value(v: &Value) -> f64 {
    v["value"]
        .as_f64()
        .unwrap_or_else(|| panic!("no value in {v}"))
}

const SMALL_RUN: &str = "
seed = 5
[grid]
nx = 24
np = 32
[solver]
dt = 0.004
t_final = 0.2
record_every = 5
ic = double_bump
";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn body_after_timestamp(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    assert!(first.starts_with("# generated"), "{first}");
    rest.to_string()
}

#[test]
fn constants_smoke() {
    let (code, j, _) = relfp(
        &[
            "constants",
            "--potential",
            "harmonic",
            "--nx",
            "48",
            "--np",
            "64",
        ],
        None,
    );
    assert_eq!(code, 0, "{j}");
    assert_eq!(j["status"], "ok");
    let c = &j["potentials"][0];
    for key in ["kappa1", "kappa2", "lambda_big_m", "delta0"] {
        assert!(value(&c[key]) > 0.0, "{key}: {}", c[key]);
        assert!(c[key]["provenance"].is_string());
    }
}

#[test]
fn usage_errors_exit_two_with_json() {
    let (code, j, out) = relfp(&["constants", "--no-such-flag"], None);
    assert_eq!(code, 2);
    assert_eq!(j["status"], "usage-error");
    assert!(!out.stderr.is_empty());
    let (code, _, _) = relfp(&["frobnicate"], None);
    assert_eq!(code, 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let (code, j, _) = relfp(
        &["simulate", "--config", &cfg, "--set", "solver.dt=0.1"],
        None,
    );
    assert_eq!(code, 2, "{j}");
    assert!(j["error"].as_str().unwrap().contains("stability"));
    let (code, _, _) = relfp(
        &["simulate", "--config", &cfg, "--set", "grid.bogus=1"],
        None,
    );
    assert_eq!(code, 2);
    let missing = dir.path().join("absent.cfg");
    let (code, j, _) = relfp(&["simulate", "--config", missing.to_str().unwrap()], None);
    assert_eq!(code, 2);
    assert_eq!(j["status"], "config-error");
    let (code, _, _) = relfp(&["constants", "--potential", "cubic"], None);
    assert_eq!(code, 2);
    let (code, _, _) = relfp(&["constants", "--nx", "48", "--np", "64"], Some("zero"));
    assert_eq!(code, 2);
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, j, _) = relfp(
        &["simulate", "--config", &cfg, "--out", a.to_str().unwrap()],
        Some("1"),
    );
    assert_eq!(code, 0, "{j}");
    assert!(j["mass_passed"].as_bool().unwrap());
    assert!(value(&j["max_mass_error"]) <= 1e-9);
    let (code, _, _) = relfp(
        &["simulate", "--config", &cfg, "--out", b.to_str().unwrap()],
        Some("4"),
    );
    assert_eq!(code, 0);
    let body = body_after_timestamp(&a.join("simulate.csv"));
    assert_eq!(body, body_after_timestamp(&b.join("simulate.csv")));
    assert_eq!(
        body.lines().next().unwrap(),
        "t,mass,l2,h1,entropy,dirichlet,s_p,h_delta,e_func,grad_x_weighted,grad_p_weighted"
    );
    assert_eq!(body.lines().count(), 1 + 1 + 50 / 5);
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("simulate.json")).unwrap()).unwrap();
    assert_eq!(saved["config"]["hash"], j["config"]["hash"]);
    assert_eq!(
        std::fs::read(a.join("final.ckpt")).unwrap(),
        std::fs::read(b.join("final.ckpt")).unwrap()
    );
}

#[test]
fn checkpoint_restarts_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let first = dir.path().join("first");
    let (code, _, _) = relfp(
        &[
            "simulate",
            "--config",
            &cfg,
            "--out",
            first.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 0);
    let ckpt = first.join("final.ckpt");
    let (header, values) = relfp_core::report::read_checkpoint(&ckpt).unwrap();
    assert_eq!((header.nx, header.np), (24, 32));
    assert!((header.time - 0.2).abs() < 1e-12);
    assert_eq!(values.len(), 24 * 32);

    let second = dir.path().join("second");
    let set = format!("solver.ic_path={}", ckpt.display());
    let (code, j, _) = relfp(
        &[
            "simulate",
            "--config",
            &cfg,
            "--set",
            "solver.ic=custom_file",
            "--set",
            &set,
            "--out",
            second.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 0, "{j}");
    let (_, a) = relfp_core::report::read_csv(&first.join("simulate.csv")).unwrap();
    let (_, b) = relfp_core::report::read_csv(&second.join("simulate.csv")).unwrap();
    // the restart starts where the first run stopped
    let (end, start) = (a.last().unwrap(), &b[0]);
    for k in 1..end.len() {
        assert!(
            (end[k] - start[k]).abs() <= 1e-9 * end[k].abs().max(1.0),
            "column {k}: {} vs {}",
            end[k],
            start[k]
        );
    }
}

#[test]
fn homogeneous_matches_gap() {
    let dir = tempfile::tempdir().unwrap();
    let (code, j, _) = relfp(
        &[
            "homogeneous",
            "--c",
            "2.5",
            "--np",
            "200",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code, 0, "{j}");
    assert!(j["matches_gap"].as_bool().unwrap());
    assert_eq!(j["fitted_rate"]["provenance"], "fitted");
    let (header, rows) = relfp_core::report::read_csv(&dir.path().join("homogeneous.csv")).unwrap();
    assert_eq!(header[0], "t");
    assert!(rows.iter().all(|r| (r[1] - 1.0).abs() <= 1e-9));
}

#[test]
fn newtonian_limit_curve() {
    let dir = tempfile::tempdir().unwrap();
    let (code, j, _) = relfp(
        &["newtonian-limit", "--c-grid", "2.1:1e4:log", "--no-eigen"],
        None,
    );
    assert_eq!(code, 0, "{j}");
    assert!((value(&j["kappa1_at_2"]) - 0.3624).abs() < 2e-3);
    assert_eq!(j["rows"].as_array().unwrap().len(), 50);

    // the eigensolver column exposes where the closed form overshoots the gap
    let (code, j, _) = relfp(
        &[
            "newtonian-limit",
            "--c-grid",
            "2.1:1000:log:6",
            "--eigen-nodes",
            "801",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    let above = j["formula_above_eigensolver_at"].as_array().unwrap();
    assert_eq!(code, if above.is_empty() { 0 } else { 1 });
    let (header, rows) =
        relfp_core::report::read_csv(&dir.path().join("newtonian_limit.csv")).unwrap();
    assert_eq!(&header[..3], &["c", "kappa1_formula", "kappa1_eigensolver"]);
    assert_eq!(rows.len(), 6);
    assert!(
        rows[0][2] > rows[0][1],
        "formula below eigensolver near c = 2"
    );
}

#[test]
fn verify_matrices_small() {
    let (code, j, _) = relfp(
        &[
            "verify-matrices",
            "--d",
            "1,3",
            "--samples",
            "300",
            "--seed",
            "11",
        ],
        None,
    );
    assert_eq!(code, 0, "{j}");
    let lemmas = j["lemmas"].as_array().unwrap();
    assert!(!lemmas.is_empty());
    for l in lemmas {
        assert!(value(&l["max_identity_residual"]) <= 1e-12);
        assert_eq!(l["failures"], 0);
    }
}

#[test]
fn elliptic_verify_runs() {
    let (code, j, _) = relfp(
        &[
            "elliptic-verify",
            "--potential",
            "harmonic",
            "--samples",
            "20",
        ],
        None,
    );
    assert_eq!(code, 0, "{j}");
    assert_eq!(j["potentials"][0]["C1"]["provenance"], "formula");
}

#[test]
fn hypoelliptic_reports_fits_and_bounds() {
    let (code, j, _) = relfp(
        &[
            "hypoelliptic",
            "--t0",
            "0.5",
            "--nx",
            "24",
            "--np",
            "32",
            "--dt",
            "0.005",
        ],
        None,
    );
    let ok = j["slopes_passed"].as_bool().unwrap() && j["bounds_passed"].as_bool().unwrap();
    assert_eq!(code, if ok { 0 } else { 1 }, "{j}");
    assert_eq!(j["slope_x"]["provenance"], "fitted");
    assert!(value(&j["C3"]) > 0.0 && value(&j["C4"]) > 0.0);
}

#[test]
fn report_merges_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        relfp(
            &[
                "newtonian-limit",
                "--c-grid",
                "2:10:lin:5",
                "--no-eigen",
                "--out",
                d
            ],
            None
        )
        .0,
        0
    );
    assert_eq!(
        relfp(&["constants", "--nx", "48", "--np", "64", "--out", d], None).0,
        0
    );
    let (code, j, _) = relfp(&["report", "--out", d], None);
    assert_eq!(code, 0, "{j}");
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let keys: Vec<&String> = saved["summaries"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["constants", "newtonian_limit"]);
}
