//! Named experiment drivers shared by the CLI and the acceptance harness.
//! Each returns a plain report plus a provenance-tagged JSON summary.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants::{
    fit_decay_rate, fit_series, kappa1_on_axis, kappa2_refined, weighted_gap,
    HypocoercivityConstants, ModelKind, RateFit, EIGEN_NODES,
};
use crate::elliptic::{
    verify_regularity, verify_weighted_poincare, weighted_laplacian_basis, PoincareReport,
    RegularityReport, WeightedConstants,
};
use crate::equilibrium::{
    build_equilibrium, default_p_radius, default_x_radius, diffusion_coeff, kappa1_bakry_emery,
    kappa1_bakry_emery_deficit, EquilibriumState,
};
use crate::error::{Error, Result};
use crate::functionals::LyapunovConfig;
use crate::grid::PhaseGrid;
use crate::matrix_checks::{
    certify_p1, certify_p2, find_theta_bounds, CertificationStatus, CertifyOptions,
    MatrixCheckReport, P1Certificate, P2Certificate, SampleSet, ThetaBounds,
};
use crate::operators::{lift, projection_pi, FluxScheme, Operators, TransportScheme};
use crate::potentials::{assumption_constants, AssumptionConstants, PotentialSpec};
use crate::report::{q, Provenance};
use crate::solver::{
    initial_relative, preflight, run_from, run_on, shifted_maxwellian_p, solve_homogeneous,
    ClipLog, InitialCondition, SimulationConfig, SolverConfig, Splitting, TrajectoryRecord,
};

pub const DEFAULT_NX: usize = 128;
pub const DEFAULT_NP: usize = 256;
/// Light speed of the inhomogeneous runs.
pub const DEFAULT_C: f64 = 1.0;
/// Fraction of the explicit transport bound used as the time step.
pub const CFL_FRACTION: f64 = 0.9;
pub const CERTIFY_SAMPLES: usize = 2000;
pub const CERTIFY_ETA: f64 = 0.5;

pub fn standard_grid(v: &PotentialSpec, nx: usize, np: usize, c: f64) -> Result<PhaseGrid> {
    PhaseGrid::uniform(default_x_radius(v), nx, default_p_radius(c), np)
}

pub fn standard_equilibrium(
    v: &PotentialSpec,
    nx: usize,
    np: usize,
    c: f64,
) -> Result<EquilibriumState> {
    build_equilibrium(&standard_grid(v, nx, np, c)?, v, c)
}

pub fn assumption_for(eq: &EquilibriumState) -> Result<AssumptionConstants> {
    assumption_constants(&eq.potential, &eq.grid.x)
}

/// All hypocoercivity constants on the standard grid; C_M on a 24×24 grid.
pub fn constants_for(eq: &EquilibriumState) -> Result<HypocoercivityConstants> {
    HypocoercivityConstants::compute(eq, &assumption_for(eq)?, 24)
}

pub fn constants_json(
    v: &PotentialSpec,
    c: f64,
    h: &HypocoercivityConstants,
    a: &AssumptionConstants,
) -> Value {
    use Provenance::*;
    json!({
        "potential": v.name(),
        "light_speed": c,
        "kappa1": q(h.kappa1, Measured),
        "kappa1_grid": q(h.kappa1_grid, Measured),
        "kappa1_bakry_emery": h.kappa1_bakry_emery.map(|k| q(k, Formula)),
        "kappa2": q(h.kappa2, Measured),
        "kappa2_grid": q(h.kappa2_grid, Measured),
        "kappa3": q(h.kappa3, Formula),
        "kappa3_printed": q(h.kappa3_printed, Formula),
        "kappa4": q(h.kappa4, Formula),
        "kappa4_printed": q(h.kappa4_printed, Formula),
        "lambda_m": q(h.lambda_m, Measured),
        "lambda_big_m": q(h.lambda_big_m, Formula),
        "lambda_big_m_printed": q(h.lambda_big_m_printed, Formula),
        "c_m": q(h.c_m_estimate, Measured),
        "delta0": q(h.delta0, Formula),
        "a": q(h.a_coeff, Measured),
        "v0_norm_sq": q(h.v0_norm_sq, Measured),
        "assumption": {
            "c1": q(a.c1, CertifiedSampled),
            "c2": q(a.c2, CertifiedSampled),
            "c3": q(a.c3, CertifiedSampled),
            "certified_radius": q(a.certified_radius, Formula),
        },
    })
}

/// θ bounds and the two weight-matrix certificates, each re-verified on a
/// sample set drawn from `seed + 1`.
#[derive(Clone, Debug, Serialize)]
pub struct CertificationReport {
    pub potential: String,
    pub thetas: ThetaBounds,
    pub p1: P1Certificate,
    pub p2: P2Certificate,
    pub p1_violation_fraction: f64,
    pub p2_violation_fraction: f64,
    pub passed: bool,
}

pub fn certification_suite(
    v: &PotentialSpec,
    t0: f64,
    samples: usize,
    seed: u64,
) -> Result<CertificationReport> {
    let s = SampleSet::for_potential(v, 1, samples, seed)?;
    let fresh = SampleSet::for_potential(v, 1, samples, seed.wrapping_add(1))?;
    let thetas = find_theta_bounds(v, 1.0, &s)?;
    let opts = CertifyOptions::default();
    let p1 = certify_p1(v, &thetas, CERTIFY_ETA, &s, &fresh, &opts)?;
    let p2 = certify_p2(v, &thetas, CERTIFY_ETA, t0, &s, &fresh, &opts)?;
    let frac = |r: &MatrixCheckReport| {
        r.found_constants
            .get("reverify_violation_fraction")
            .copied()
            .unwrap_or(1.0)
    };
    let (f1, f2) = (frac(&p1.report), frac(&p2.report));
    let passed = p1.report.status == CertificationStatus::Certified
        && p2.report.status == CertificationStatus::Certified
        && f1 <= 0.01
        && f2 <= 0.01;
    Ok(CertificationReport {
        potential: v.name(),
        thetas,
        p1,
        p2,
        p1_violation_fraction: f1,
        p2_violation_fraction: f2,
        passed,
    })
}

impl CertificationReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        let th = &self.thetas;
        json!({
            "potential": self.potential,
            "theta": [q(th.theta1, CertifiedSampled), q(th.theta2, CertifiedSampled), q(th.theta3, CertifiedSampled), q(th.theta4, CertifiedSampled)],
            "p1": {
                "epsilon": q(self.p1.epsilon, CertifiedSampled),
                "gamma": q(self.p1.gamma, CertifiedSampled),
                "C": q(self.p1.c, CertifiedSampled),
                "status": self.p1.report.status,
                "violation_fraction": q(self.p1_violation_fraction, Measured),
            },
            "p2": {
                "t0": self.p2.t0,
                "epsilon": q(self.p2.epsilon, CertifiedSampled),
                "gamma": q(self.p2.gamma, CertifiedSampled),
                "C3": q(self.p2.c3, Formula),
                "C4": q(self.p2.c4, Formula),
                "status": self.p2.report.status,
                "violation_fraction": q(self.p2_violation_fraction, Measured),
            },
            "caveat": self.p1.report.caveat,
            "passed": self.passed,
        })
    }
}

/// (δ, γ, ε, η) for E: δ = δ₀/2 and the P₁ certificate for the rest.
pub fn certified_lyapunov(
    v: &PotentialSpec,
    delta0: f64,
    seed: u64,
) -> Result<(LyapunovConfig, P1Certificate)> {
    let s = SampleSet::for_potential(v, 1, CERTIFY_SAMPLES, seed)?;
    let fresh = SampleSet::for_potential(v, 1, CERTIFY_SAMPLES, seed.wrapping_add(1))?;
    let thetas = find_theta_bounds(v, 1.0, &s)?;
    let p1 = certify_p1(
        v,
        &thetas,
        CERTIFY_ETA,
        &s,
        &fresh,
        &CertifyOptions::default(),
    )?;
    let cfg = LyapunovConfig {
        delta: 0.5 * delta0,
        gamma: p1.gamma,
        epsilon: p1.epsilon,
        eta: CERTIFY_ETA,
    };
    cfg.validate(Some(delta0))?;
    Ok((cfg, p1))
}

/// Largest per-record increase of a column, relative to its largest value.
#[derive(Clone, Debug, Serialize)]
pub struct MonotoneCheck {
    pub column: String,
    pub initial: f64,
    pub last: f64,
    pub worst_relative_increase: f64,
    pub passed: bool,
}

/// Non-increase with tolerance 1e-12·scale per time step.
pub fn monotone_checks(
    rec: &TrajectoryRecord,
    columns: &[&str],
    dt: f64,
) -> Result<Vec<MonotoneCheck>> {
    columns
        .iter()
        .map(|&name| {
            let v = rec
                .column(name)
                .ok_or_else(|| Error::Config(format!("unknown column {name}")))?;
            let scale = v
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()))
                .max(f64::MIN_POSITIVE);
            let mut worst = f64::NEG_INFINITY;
            let mut passed = true;
            for k in 1..v.len() {
                let steps = ((rec.times[k] - rec.times[k - 1]) / dt).round().max(1.0);
                let inc = (v[k] - v[k - 1]) / scale;
                worst = worst.max(inc);
                if inc > 1e-12 * steps || !v[k].is_finite() {
                    passed = false;
                }
            }
            Ok(MonotoneCheck {
                column: name.into(),
                initial: v[0],
                last: v[v.len() - 1],
                worst_relative_increase: worst,
                passed,
            })
        })
        .collect()
}

/// Time step at the given fraction of the explicit transport bound.
pub fn stable_dt(
    ops: &Operators,
    eq: &EquilibriumState,
    transport: TransportScheme,
) -> Result<f64> {
    let probe = SolverConfig {
        dt: 1e-12,
        t_final: 1.0,
        transport,
        splitting: Splitting::Lie,
        ..Default::default()
    };
    Ok(CFL_FRACTION * preflight(&probe, ops, eq)?.dt_bound)
}

/// Long inhomogeneous run from a smooth datum with E recorded.
#[derive(Clone, Debug, Serialize)]
pub struct LyapunovRunReport {
    pub potential: String,
    pub nx: usize,
    pub np: usize,
    pub dt: f64,
    pub steps: usize,
    pub t_final: f64,
    pub max_mass_error: f64,
    pub monotone: Vec<MonotoneCheck>,
    pub lyapunov: LyapunovConfig,
    pub delta0: f64,
    pub clip: ClipLog,
    pub runtime_s: f64,
    pub mass_passed: bool,
    pub monotone_passed: bool,
}

pub const LYAPUNOV_COLUMNS: [&str; 4] = ["l2", "entropy", "h_delta", "e_func"];

pub fn lyapunov_suite(
    v: &PotentialSpec,
    nx: usize,
    np: usize,
    steps: usize,
    seed: u64,
) -> Result<(LyapunovRunReport, TrajectoryRecord)> {
    let start = Instant::now();
    let eq = standard_equilibrium(v, nx, np, DEFAULT_C)?;
    let hc = constants_for(&eq)?;
    let (ly, _) = certified_lyapunov(v, hc.delta0, seed)?;
    let transport = TransportScheme::Central;
    let ops = Operators::new(&eq, FluxScheme::ChangCooper, transport);
    let dt = stable_dt(&ops, &eq, transport)?;
    let cfg = SimulationConfig {
        solver: SolverConfig {
            dt,
            t_final: dt * steps as f64,
            splitting: Splitting::Lie,
            transport,
            record_every: (steps / 100).max(1),
            initial_condition: InitialCondition::ShiftedMaxwellian {
                x0: 1.0,
                p_shift: 1.0,
            },
            ..Default::default()
        },
        lyapunov: Some(ly),
    };
    let (rec, _) = run_on(&cfg, &eq, &ops)?;
    let max_mass_error = rec
        .diagnostics
        .iter()
        .map(|d| (d.mass - 1.0).abs())
        .fold(0.0, f64::max);
    let monotone = monotone_checks(&rec, &LYAPUNOV_COLUMNS, rec.meta.dt)?;
    let report = LyapunovRunReport {
        potential: v.name(),
        nx,
        np,
        dt: rec.meta.dt,
        steps: rec.meta.steps,
        t_final: cfg.solver.t_final,
        max_mass_error,
        monotone_passed: monotone.iter().all(|m| m.passed),
        monotone,
        lyapunov: ly,
        delta0: hc.delta0,
        clip: rec.meta.clip.clone(),
        runtime_s: start.elapsed().as_secs_f64(),
        mass_passed: max_mass_error <= 1e-9,
    };
    Ok((report, rec))
}

impl LyapunovRunReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        let mono: Vec<Value> = self
            .monotone
            .iter()
            .map(|m| json!({"column": m.column, "initial": q(m.initial, Measured), "last": q(m.last, Measured), "worst_relative_increase": q(m.worst_relative_increase, Measured), "passed": m.passed}))
            .collect();
        json!({
            "potential": self.potential,
            "grid": [self.nx, self.np],
            "dt": self.dt,
            "steps": self.steps,
            "t_final": self.t_final,
            "max_mass_error": q(self.max_mass_error, Measured),
            "monotone": mono,
            "lyapunov": {"delta": q(self.lyapunov.delta, Formula), "gamma": q(self.lyapunov.gamma, CertifiedSampled), "epsilon": q(self.lyapunov.epsilon, CertifiedSampled), "eta": self.lyapunov.eta},
            "delta0": q(self.delta0, Formula),
            "clip": self.clip,
            "runtime_s": self.runtime_s,
            "mass_passed": self.mass_passed,
            "monotone_passed": self.monotone_passed,
        })
    }
}

/// Homogeneous decay against the discrete gap and the Bakry-Emery bound.
#[derive(Clone, Debug, Serialize)]
pub struct HomogeneousGapReport {
    pub c: f64,
    pub np: usize,
    pub discrete_gap: f64,
    pub fit: RateFit,
    pub relative_error: f64,
    pub kappa1_bakry_emery: Option<f64>,
    pub matches_gap: bool,
    pub above_bakry_emery: Option<bool>,
}

pub fn homogeneous_gap(
    c: f64,
    np: usize,
    p_shift: f64,
) -> Result<(HomogeneousGapReport, TrajectoryRecord)> {
    let grid = PhaseGrid::uniform(
        default_x_radius(&PotentialSpec::Harmonic),
        3,
        default_p_radius(c),
        np,
    )?;
    let eq = build_equilibrium(&grid, &PotentialSpec::Harmonic, c)?;
    let gap = crate::constants::poincare_constant_p(&eq)?;
    let rho0 = shifted_maxwellian_p(&eq, p_shift);
    let horizon = 12.0 / gap;
    let cfg = SolverConfig {
        dt: 0.005 / gap,
        t_final: horizon,
        splitting: Splitting::Strang,
        record_every: 10,
        ..Default::default()
    };
    let rec = solve_homogeneous(&rho0, &eq, &cfg)?;
    let l2 = rec
        .column("l2")
        .ok_or_else(|| Error::Config("l2 column".into()))?;
    let fit = fit_series(
        &rec.times,
        &l2,
        ModelKind::Exponential,
        Some((4.0 / gap, horizon)),
    )?;
    let rel = (fit.rate / gap - 1.0).abs();
    let be = kappa1_bakry_emery(c).ok();
    Ok((
        HomogeneousGapReport {
            c,
            np,
            discrete_gap: gap,
            relative_error: rel,
            kappa1_bakry_emery: be,
            matches_gap: rel <= 0.05 && fit.accepted(),
            above_bakry_emery: be.map(|k| fit.rate >= k),
            fit,
        },
        rec,
    ))
}

impl HomogeneousGapReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        json!({
            "c": self.c,
            "np": self.np,
            "discrete_gap": q(self.discrete_gap, Measured),
            "fitted_rate": q(self.fit.rate, Fitted),
            "r_squared": q(self.fit.r_squared, Fitted),
            "relative_error": q(self.relative_error, Measured),
            "kappa1_bakry_emery": self.kappa1_bakry_emery.map(|k| q(k, Formula)),
            "matches_gap": self.matches_gap,
            "above_bakry_emery": self.above_bakry_emery,
        })
    }
}

/// Parses "lo:hi:log[:n]" or "lo:hi:lin[:n]" into a grid of c values.
pub fn parse_c_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 2 || parts.len() > 4 {
        return Err(Error::Config(format!(
            "c grid {spec:?}: expected lo:hi[:log|lin[:n]]"
        )));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("c grid {spec:?}: {e}")))
    };
    let (lo, hi) = (num(parts[0])?, num(parts[1])?);
    let kind = parts.get(2).copied().unwrap_or("log");
    let n = match parts.get(3) {
        Some(s) => s
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("c grid {spec:?}: {e}")))?,
        None => 50,
    };
    if !(lo >= 2.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(Error::Config(format!(
            "c grid {spec:?}: need 2 <= lo < hi and n >= 2"
        )));
    }
    let f = |k: usize| k as f64 / (n - 1) as f64;
    match kind {
        "log" => Ok((0..n).map(|k| lo * (hi / lo).powf(f(k))).collect()),
        "lin" => Ok((0..n).map(|k| lo + (hi - lo) * f(k)).collect()),
        other => Err(Error::Config(format!(
            "c grid spacing {other:?} is neither log nor lin"
        ))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonianRow {
    pub c: f64,
    pub formula: f64,
    /// 1 - formula, evaluated without cancellation
    pub deficit: f64,
    pub eigensolver: Option<f64>,
}

/// κ₁(c) by the closed form and, optionally, by the momentum eigensolver.
pub fn newtonian_limit(cs: &[f64], eigen_nodes: Option<usize>) -> Result<Vec<NewtonianRow>> {
    use rayon::prelude::*;
    cs.par_iter()
        .map(|&c| {
            let formula = kappa1_bakry_emery(c)?;
            let eigensolver = match eigen_nodes {
                Some(n) => Some(kappa1_on_axis(c, n)?),
                None => None,
            };
            Ok(NewtonianRow {
                c,
                formula,
                deficit: kappa1_bakry_emery_deficit(c)?,
                eigensolver,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonianSummary {
    pub at_two: f64,
    pub strictly_increasing: bool,
    pub at_end: f64,
    /// c values where the closed form exceeds the eigensolver value
    pub formula_above_eigen: Vec<f64>,
}

pub fn newtonian_summary(rows: &[NewtonianRow]) -> Result<NewtonianSummary> {
    let last = rows
        .last()
        .ok_or_else(|| Error::Config("empty c grid".into()))?;
    Ok(NewtonianSummary {
        at_two: kappa1_bakry_emery(2.0)?,
        // κ₁ rounds to 1.0 beyond c ≈ 3000; the deficit still resolves the order
        strictly_increasing: rows
            .windows(2)
            .all(|w| w[1].deficit < w[0].deficit && w[1].formula >= w[0].formula),
        at_end: last.formula,
        formula_above_eigen: rows
            .iter()
            .filter(|r| r.eigensolver.is_some_and(|e| r.formula > e))
            .map(|r| r.c)
            .collect(),
    })
}

/// Power laws of the weighted gradient functionals after a rough datum.
#[derive(Clone, Debug, Serialize)]
pub struct HypoellipticReport {
    pub potential: String,
    pub nx: usize,
    pub np: usize,
    pub dt: f64,
    pub t0: f64,
    pub window: (f64, f64),
    pub fit_x: RateFit,
    pub fit_p: RateFit,
    pub slope_x: f64,
    pub slope_p: f64,
    pub c3: f64,
    pub c4: f64,
    pub initial_l2_sq: f64,
    /// max over recorded t of t³ G_x(t) / (C₃‖h₀‖²); ≤ 1 means the bound holds
    pub bound_ratio_x: f64,
    /// max over recorded t of t G_p(t) / (C₄‖h₀‖²)
    pub bound_ratio_p: f64,
    pub clip: ClipLog,
    pub runtime_s: f64,
    pub slopes_passed: bool,
    pub bounds_passed: bool,
}

pub const SLOPE_X: f64 = -3.0;
pub const SLOPE_P: f64 = -1.0;

/// Rough indicator datum, upwind transport (monotone, so no clipping) and
/// backward-Euler collision; records on a geometric time grid.
pub fn hypoelliptic(
    v: &PotentialSpec,
    t0: f64,
    nx: usize,
    np: usize,
    dt: f64,
    seed: u64,
) -> Result<(HypoellipticReport, TrajectoryRecord)> {
    let start = Instant::now();
    if !(t0 > 0.0) {
        return Err(Error::Config(format!("t0 must be positive, got {t0}")));
    }
    let eq = standard_equilibrium(v, nx, np, DEFAULT_C)?;
    let transport = TransportScheme::Upwind;
    let ops = Operators::new(&eq, FluxScheme::ChangCooper, transport);
    let dt = dt.min(stable_dt(&ops, &eq, transport)?);
    let window = (0.05 * t0, t0);
    let cfg = SimulationConfig {
        solver: SolverConfig {
            dt,
            t_final: t0,
            splitting: Splitting::Lie,
            transport,
            geometric_records: Some(60),
            initial_condition: InitialCondition::rough_default(),
            ..Default::default()
        },
        lyapunov: None,
    };
    let h0 = initial_relative(&cfg.solver.initial_condition, &eq)?;
    let l2_0 = eq.l2_sq(&h0);
    let (rec, _) = run_from(&cfg, &eq, &ops, h0)?;
    let fit_x = fit_decay_rate(
        &rec.diagnostics,
        "grad_x_weighted",
        ModelKind::PowerLaw,
        Some(window),
    )?;
    let fit_p = fit_decay_rate(
        &rec.diagnostics,
        "grad_p_weighted",
        ModelKind::PowerLaw,
        Some(window),
    )?;
    let cert = certification_suite(v, t0, CERTIFY_SAMPLES, seed)?;
    let (c3, c4) = (cert.p2.c3, cert.p2.c4);
    let mut rx = 0.0f64;
    let mut rp = 0.0f64;
    for d in rec.diagnostics.iter().filter(|d| d.t > 0.0) {
        rx = rx.max(d.t.powi(3) * d.grad_x_weighted / (c3 * l2_0));
        rp = rp.max(d.t * d.grad_p_weighted / (c4 * l2_0));
    }
    let (sx, sp) = (-fit_x.rate, -fit_p.rate);
    let slopes_passed = (sx - SLOPE_X).abs() <= 0.3
        && (sp - SLOPE_P).abs() <= 0.2
        && fit_x.accepted()
        && fit_p.accepted();
    Ok((
        HypoellipticReport {
            potential: v.name(),
            nx,
            np,
            dt: rec.meta.dt,
            t0,
            window,
            slope_x: sx,
            slope_p: sp,
            fit_x,
            fit_p,
            c3,
            c4,
            initial_l2_sq: l2_0,
            bound_ratio_x: rx,
            bound_ratio_p: rp,
            clip: rec.meta.clip.clone(),
            runtime_s: start.elapsed().as_secs_f64(),
            slopes_passed,
            bounds_passed: rx <= 1.0 && rp <= 1.0 && cert.passed,
        },
        rec,
    ))
}

impl HypoellipticReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        json!({
            "potential": self.potential,
            "grid": [self.nx, self.np],
            "dt": self.dt,
            "t0": self.t0,
            "window": [self.window.0, self.window.1],
            "slope_x": q(self.slope_x, Fitted),
            "r_squared_x": q(self.fit_x.r_squared, Fitted),
            "slope_p": q(self.slope_p, Fitted),
            "r_squared_p": q(self.fit_p.r_squared, Fitted),
            "target_slopes": [SLOPE_X, SLOPE_P],
            "C3": q(self.c3, Formula),
            "C4": q(self.c4, Formula),
            "initial_l2_sq": q(self.initial_l2_sq, Measured),
            "bound_ratio_x": q(self.bound_ratio_x, Measured),
            "bound_ratio_p": q(self.bound_ratio_p, Measured),
            "clip": self.clip,
            "runtime_s": self.runtime_s,
            "slopes_passed": self.slopes_passed,
            "bounds_passed": self.bounds_passed,
        })
    }
}

/// Exponential rates of ‖h‖, the H¹ norm and E on a smooth run.
#[derive(Clone, Debug, Serialize)]
pub struct H1DecayReport {
    pub potential: String,
    pub l2: RateFit,
    pub h1: RateFit,
    pub e_func: RateFit,
    pub passed: bool,
}

pub fn h1_decay(
    v: &PotentialSpec,
    nx: usize,
    np: usize,
    t_final: f64,
    seed: u64,
) -> Result<(H1DecayReport, TrajectoryRecord)> {
    let eq = standard_equilibrium(v, nx, np, DEFAULT_C)?;
    let hc = constants_for(&eq)?;
    let (ly, _) = certified_lyapunov(v, hc.delta0, seed)?;
    let transport = TransportScheme::Central;
    let ops = Operators::new(&eq, FluxScheme::ChangCooper, transport);
    let dt = stable_dt(&ops, &eq, transport)?;
    let steps = (t_final / dt).ceil();
    let cfg = SimulationConfig {
        solver: SolverConfig {
            dt,
            t_final,
            transport,
            splitting: Splitting::Lie,
            record_every: ((steps / 200.0).ceil() as usize).max(1),
            initial_condition: InitialCondition::ShiftedMaxwellian {
                x0: 1.0,
                p_shift: 1.0,
            },
            ..Default::default()
        },
        lyapunov: Some(ly),
    };
    let (rec, _) = run_on(&cfg, &eq, &ops)?;
    let window = Some((0.2 * t_final, t_final));
    let l2 = fit_decay_rate(&rec.diagnostics, "l2", ModelKind::Exponential, window)?;
    let h1 = fit_decay_rate(&rec.diagnostics, "h1", ModelKind::Exponential, window)?;
    let e = fit_decay_rate(&rec.diagnostics, "e_func", ModelKind::Exponential, window)?;
    let passed = h1.rate >= 0.5 * l2.rate && e.rate > 0.0 && e.accepted();
    Ok((
        H1DecayReport {
            potential: v.name(),
            l2,
            h1,
            e_func: e,
            passed,
        },
        rec,
    ))
}

impl H1DecayReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        let f = |r: &RateFit| json!({"rate": q(r.rate, Fitted), "r_squared": q(r.r_squared, Fitted), "window": [r.window.0, r.window.1]});
        json!({"potential": self.potential, "l2": f(&self.l2), "h1": f(&self.h1), "e_func": f(&self.e_func), "passed": self.passed})
    }
}

/// Regularity and weighted Poincaré checks on one potential.
#[derive(Clone, Debug, Serialize)]
pub struct EllipticReport {
    pub potential: String,
    pub regularity: RegularityReport,
    pub poincare: PoincareReport,
    pub passed: bool,
}

pub fn elliptic_suite(
    v: &PotentialSpec,
    nx: usize,
    basis: usize,
    samples: usize,
    seed: u64,
) -> Result<EllipticReport> {
    let eq = standard_equilibrium(v, nx, 9, DEFAULT_C)?;
    let ac = assumption_for(&eq)?;
    let k2 = kappa2_refined(v, eq.grid.x.truncation_radius, EIGEN_NODES)?;
    let k = WeightedConstants::new(&eq, &ac, k2)?;
    let regularity = verify_regularity(&eq, &k, eq.a_coeff(), basis, None)?;
    let poincare = verify_weighted_poincare(&eq, &k, samples, seed)?;
    let passed = regularity.passed && poincare.passed;
    Ok(EllipticReport {
        potential: v.name(),
        regularity,
        poincare,
        passed,
    })
}

impl EllipticReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        let r = &self.regularity;
        let p = &self.poincare;
        json!({
            "potential": self.potential,
            "a": q(r.a, Measured),
            "delta": r.delta,
            "epsilon": r.eps,
            "delta_eps_fallback": r.fallback,
            "C1": q(r.c1, Formula),
            "C2": q(r.c2, Formula),
            "max_gradient_ratio": q(r.max_gradient_ratio, Measured),
            "max_hessian_ratio": q(r.max_hessian_ratio, Measured),
            "max_residual": q(r.max_residual, Measured),
            "regularity_passed": r.passed,
            "kappa3": q(p.kappa3, Formula),
            "kappa4": q(p.kappa4, Formula),
            "poincare_samples": p.samples,
            "max_ratio_kappa3": q(p.max_ratio1, Measured),
            "max_ratio_kappa4": q(p.max_ratio2, Measured),
            "max_ratio_kappa3_printed": q(p.max_ratio1_printed, Measured),
            "max_ratio_kappa4_printed": q(p.max_ratio2_printed, Measured),
            "poincare_passed": p.passed,
            "passed": self.passed,
        })
    }
}

/// Discrete structure of L and T on random fields.
#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub potential: String,
    pub samples: usize,
    /// max |⟨Lh,g⟩ - ⟨h,Lg⟩| / (‖h‖‖g‖)
    pub symmetry_residual: f64,
    /// max |⟨Th,g⟩ + ⟨h,Tg⟩| / (‖h‖‖g‖) for fields vanishing on the open p-ends
    pub skew_residual: f64,
    /// max |ΠTΠh| on the grid and on the grid with halved spacings
    pub ptp: (f64, f64),
    pub spacing_sq: f64,
    /// min of -⟨Lh,h⟩ / ‖(I-Π)h‖² over the samples
    pub micro_min: f64,
    pub kappa1: f64,
    /// min of ‖TΠh‖² / ‖Πh - mean‖² over smooth macroscopic samples
    pub macro_min: f64,
    pub lambda_big_m: f64,
    pub passed: bool,
}

pub fn operator_structure(
    v: &PotentialSpec,
    nx: usize,
    np: usize,
    samples: usize,
    seed: u64,
) -> Result<StructureReport> {
    let eq = standard_equilibrium(v, nx, np, DEFAULT_C)?;
    let hc = constants_for(&eq)?;
    let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
    let (n, np_) = (eq.len(), eq.np());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = |interior: bool| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let j = k % np_;
                if interior && (j == 0 || j == np_ - 1) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect()
    };
    let norm = |h: &[f64]| eq.l2_sq(h).sqrt();
    let mut sym = 0.0f64;
    let mut skew = 0.0f64;
    let mut micro = f64::INFINITY;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for _ in 0..samples {
        let (h, g) = (random(false), random(false));
        ops.collision.apply(&h, &mut a);
        ops.collision.apply(&g, &mut b);
        sym = sym.max((eq.inner(&a, &g) - eq.inner(&h, &b)).abs() / (norm(&h) * norm(&g)));
        let u = projection_pi(&h, &eq);
        let lifted = lift(&u, np_);
        let micro_part: Vec<f64> = h.iter().zip(&lifted).map(|(h, u)| h - u).collect();
        micro = micro.min(-eq.inner(&a, &h) / eq.l2_sq(&micro_part));
        let (h, g) = (random(true), random(true));
        ops.transport.apply(&h, &mut a);
        ops.transport.apply(&g, &mut b);
        skew = skew.max((eq.inner(&a, &g) + eq.inner(&h, &b)).abs() / (norm(&h) * norm(&g)));
    }
    // near-extremal microscopic samples: slowest momentum mode times a random
    // x-profile, plus a small random field
    let c = eq.light_speed;
    let (_, e1) = weighted_gap(&eq.grid.p, &eq.maxwellian, &eq.m_face, |p| {
        diffusion_coeff(p, c)
    })?;
    for _ in 0..samples {
        let u: Vec<f64> = (0..eq.nx()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise = rng.gen_range(0.0..0.1);
        let h: Vec<f64> = (0..n)
            .map(|k| u[k / np_] * e1[k % np_] + noise * rng.gen_range(-1.0..1.0))
            .collect();
        ops.collision.apply(&h, &mut a);
        let lifted = lift(&projection_pi(&h, &eq), np_);
        let micro_part: Vec<f64> = h.iter().zip(&lifted).map(|(h, u)| h - u).collect();
        micro = micro.min(-eq.inner(&a, &h) / eq.l2_sq(&micro_part));
    }
    // macroscopic samples: random combinations of the first ten x-modes
    let basis = weighted_laplacian_basis(&eq, 10)?;
    let mut macro_min = f64::INFINITY;
    for _ in 0..samples {
        let mut u = vec![0.0; eq.nx()];
        for (m, (_, e)) in basis.iter().enumerate() {
            let c: f64 = rng.gen_range(-1.0..1.0) / (m + 1) as f64;
            for (u, e) in u.iter_mut().zip(e) {
                *u += c * e;
            }
        }
        let h = lift(&u, np_);
        let mean = eq.mean(&h);
        let centred: Vec<f64> = h.iter().map(|v| v - mean).collect();
        ops.transport.apply(&h, &mut a);
        macro_min = macro_min.min(eq.l2_sq(&a) / eq.l2_sq(&centred));
    }
    let ptp_on = |eq: &EquilibriumState| -> f64 {
        let ops = Operators::new(eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let g: Vec<f64> = eq
            .grid
            .x
            .nodes
            .iter()
            .map(|x| (0.7 * x).sin() + 0.3 * x.cos())
            .collect();
        let mut t = vec![0.0; eq.len()];
        ops.transport.apply(&lift(&g, eq.np()), &mut t);
        projection_pi(&t, eq)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    };
    let fine = standard_equilibrium(v, 2 * nx, 2 * np, DEFAULT_C)?;
    let ptp = (ptp_on(&eq), ptp_on(&fine));
    let h2 = eq.grid.x.spacing.powi(2).max(eq.grid.p.spacing.powi(2));
    let passed = sym <= 1e-9
        && skew <= 1e-9
        && ptp.0 <= h2
        && ptp.1 <= 0.25 * h2 + 1e-12
        && micro >= 0.95 * hc.kappa1
        && macro_min >= 0.95 * hc.lambda_big_m;
    Ok(StructureReport {
        potential: v.name(),
        samples,
        symmetry_residual: sym,
        skew_residual: skew,
        ptp,
        spacing_sq: h2,
        micro_min: micro,
        kappa1: hc.kappa1,
        macro_min,
        lambda_big_m: hc.lambda_big_m,
        passed,
    })
}

impl StructureReport {
    pub fn to_json(&self) -> Value {
        use Provenance::*;
        json!({
            "potential": self.potential,
            "samples": self.samples,
            "symmetry_residual": q(self.symmetry_residual, Measured),
            "skew_residual": q(self.skew_residual, Measured),
            "ptp": [q(self.ptp.0, Measured), q(self.ptp.1, Measured)],
            "spacing_sq": self.spacing_sq,
            "micro_min": q(self.micro_min, Measured),
            "kappa1": q(self.kappa1, Measured),
            "macro_min": q(self.macro_min, Measured),
            "lambda_big_m": q(self.lambda_big_m, Formula),
            "passed": self.passed,
        })
    }
}

/// Potential from a CLI/config name.
pub fn potential_by_name(name: &str) -> Result<PotentialSpec> {
    match name {
        "harmonic" => Ok(PotentialSpec::Harmonic),
        "quartic" => Ok(PotentialSpec::quartic()),
        "double-well" | "double_well" | "doublewell" => Ok(PotentialSpec::double_well()),
        other => Err(Error::Config(format!(
            "unknown potential {other:?} (harmonic, quartic, double-well)"
        ))),
    }
}
