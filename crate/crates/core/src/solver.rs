//! Time integration of h = f/f∞ - 1 for h_t + T h = L h on the (x, p) grid
//! and of the momentum-only problem h_t = L h.
//!
//! The collision part is always implicit (one Thomas factorisation reused for
//! every x-row), transport is explicit SSP-RK3. Mass moves only through the
//! open momentum ends, where f∞ is below the truncation tolerance.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{build_equilibrium, kinetic_exponent, EquilibriumState};
use crate::error::{Error, Result};
use crate::functionals::{DiagnosticsRecord, FunctionalContext, LyapunovConfig};
use crate::grid::{FieldKind, PhaseField, PhaseGrid};
use crate::linalg::{pairwise_sum, TriFactor};
use crate::operators::{CollisionOperator, FluxScheme, Operators, TransportScheme};
use crate::potentials::PotentialSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// C(dt/2) T(dt) C(dt/2) with Crank-Nicolson collision halves
    Strang,
    /// T(dt) then backward-Euler C(dt)
    Lie,
    /// (I - dt L) h' = h - dt T h, unsplit; upwind transport only
    Imex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// f₀ ∝ ρ∞(x) e^{x₀ tanh x} M(p - p_shift): equilibrium tilted towards
    /// sign(x₀) with a momentum-shifted Maxwellian, so f₀/f∞ stays bounded.
    ShiftedMaxwellian { x0: f64, p_shift: f64 },
    /// f₀ = f∞(1 + h₀) with two Gaussian bumps of h at ±(1, 1), width 1/2.
    DoubleBump,
    /// Normalised indicator of [x_lo, x_hi] × [p_lo, p_hi], each node taking
    /// the covered fraction of its cell.
    RoughIndicator {
        x_lo: f64,
        x_hi: f64,
        p_lo: f64,
        p_hi: f64,
    },
    /// Absolute density read from a checkpoint or a whitespace-separated
    /// text file with nx·np values in row-major (x, p) order.
    CustomFile { path: PathBuf },
}

impl InitialCondition {
    pub fn rough_default() -> Self {
        InitialCondition::RoughIndicator {
            x_lo: -1.0,
            x_hi: 1.0,
            p_lo: -1.0,
            p_hi: 1.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitialCondition::ShiftedMaxwellian { x0, p_shift } => {
                format!("shifted_maxwellian(x0={x0}, p_shift={p_shift})")
            }
            InitialCondition::DoubleBump => "double_bump".into(),
            InitialCondition::RoughIndicator {
                x_lo,
                x_hi,
                p_lo,
                p_hi,
            } => {
                format!("rough_indicator([{x_lo}, {x_hi}] x [{p_lo}, {p_hi}])")
            }
            InitialCondition::CustomFile { path } => format!("custom_file({})", path.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub splitting: Splitting,
    pub record_every: usize,
    pub initial_condition: InitialCondition,
    pub flux: FluxScheme,
    pub transport: TransportScheme,
    /// raise f to 0 where it went negative, with a log entry
    pub clip_negative: bool,
    /// record at this many geometrically spaced times in [10 dt, t_final]
    /// instead of every `record_every` steps
    pub geometric_records: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-2,
            t_final: 1.0,
            splitting: Splitting::Lie,
            record_every: 10,
            initial_condition: InitialCondition::ShiftedMaxwellian {
                x0: 1.0,
                p_shift: 1.0,
            },
            flux: FluxScheme::ChangCooper,
            transport: TransportScheme::Central,
            clip_negative: true,
            geometric_records: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::Config(format!(
                "t_final = {} must be at least dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if self.splitting == Splitting::Imex && self.transport != TransportScheme::Upwind {
            return Err(Error::Config(
                "imex splitting is explicit Euler in transport and needs scheme.transport = upwind"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Number of steps and the step that makes them land on t_final.
    pub fn steps(&self) -> (usize, f64) {
        let n = (self.t_final / self.dt).round().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }

    /// Step indices at which diagnostics are recorded (always including 0
    /// and the last step).
    pub fn record_steps(&self) -> Vec<usize> {
        let (n, dt) = self.steps();
        let mut out = vec![0];
        match self.geometric_records {
            Some(count) if count >= 2 => {
                let (lo, hi) = ((10.0 * dt).min(self.t_final), self.t_final);
                for k in 0..count {
                    let t = lo * (hi / lo).powf(k as f64 / (count - 1) as f64);
                    out.push(((t / dt).round() as usize).clamp(1, n));
                }
            }
            _ => out.extend((1..=n).filter(|s| s % self.record_every == 0)),
        }
        out.push(n);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Largest dt the pre-flight check accepts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub dt_bound: f64,
    /// upper bound on the W-norm of T
    pub transport_norm: f64,
    pub detail: String,
}

/// SSP-RK3 covers the imaginary axis up to √3, which bounds the central
/// (W-skew) transport; for upwind the bound is the forward-Euler monotonicity
/// limit, under which RK3 keeps f ≥ 0.
pub fn preflight(
    cfg: &SolverConfig,
    ops: &Operators,
    eq: &EquilibriumState,
) -> Result<StabilityReport> {
    cfg.validate()?;
    let norm = ops.transport.norm_bound(&eq.cell_weight);
    let (bound, detail) = match ops.transport.scheme {
        TransportScheme::Central => (
            3f64.sqrt() / norm,
            "sqrt(3)/||T|| for SSP-RK3 with central transport",
        ),
        TransportScheme::Upwind => (
            ops.transport.monotone_dt(),
            "forward-Euler monotonicity of upwind transport",
        ),
    };
    let (_, dt) = cfg.steps();
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Stability {
            dt,
            bound,
            detail: detail.into(),
        });
    }
    Ok(StabilityReport {
        dt_bound: bound,
        transport_norm: norm,
        detail: detail.into(),
    })
}

/// Negative-density clipping, never silent.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClipLog {
    pub steps_with_clipping: usize,
    pub cells: usize,
    /// total mass added by clipping
    pub mass_added: f64,
    /// most negative f seen before clipping
    pub min_density: f64,
}

/// Row-wise implicit collision solves for one step size.
struct CollisionStepper {
    ie: TriFactor,
    cn: Option<(TriFactor, f64)>,
    collision: CollisionOperator,
    dt: f64,
}

impl CollisionStepper {
    fn new(collision: &CollisionOperator, dt: f64, splitting: Splitting) -> Result<Self> {
        let ie = collision.b.shifted(1.0, -dt).factor()?;
        let cn = if splitting == Splitting::Strang {
            Some((collision.b.shifted(1.0, -0.25 * dt).factor()?, 0.5 * dt))
        } else {
            None
        };
        Ok(CollisionStepper {
            ie,
            cn,
            collision: collision.clone(),
            dt,
        })
    }

    fn affine(&self) -> Option<&[f64]> {
        (self.collision.scheme != FluxScheme::ChangCooper).then_some(&self.collision.affine[..])
    }

    /// (I - dt B) h' = h + dt a.
    fn backward_euler_row(&self, h: &mut [f64]) {
        if let Some(a) = self.affine() {
            for (h, a) in h.iter_mut().zip(a) {
                *h += self.dt * a;
            }
        }
        self.ie.solve_in_place(h);
    }

    /// Crank-Nicolson over τ = dt/2: (I - τ/2 B) h' = (I + τ/2 B) h + τ a.
    fn crank_nicolson_row(&self, h: &mut [f64], scratch: &mut [f64]) {
        let (f, tau) = self.cn.as_ref().expect("Crank-Nicolson factor");
        self.collision.b.apply(h, scratch);
        for (k, h) in h.iter_mut().enumerate() {
            *h += 0.5 * tau * scratch[k];
        }
        if let Some(a) = self.affine() {
            for (h, a) in h.iter_mut().zip(a) {
                *h += tau * a;
            }
        }
        f.solve_in_place(h);
    }
}

/// One integrator per (discretisation, dt, splitting).
pub struct Integrator<'a> {
    pub eq: &'a EquilibriumState,
    pub ops: &'a Operators,
    pub splitting: Splitting,
    pub dt: f64,
    pub clip_negative: bool,
    pub clip_log: ClipLog,
    pub stability: StabilityReport,
    collision: CollisionStepper,
    k1: Vec<f64>,
    k2: Vec<f64>,
    stage: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(eq: &'a EquilibriumState, ops: &'a Operators, cfg: &SolverConfig) -> Result<Self> {
        let stability = preflight(cfg, ops, eq)?;
        let (_, dt) = cfg.steps();
        let collision = CollisionStepper::new(&ops.collision, dt, cfg.splitting).map_err(|e| {
            Error::Stability {
                dt,
                bound: stability.dt_bound,
                detail: format!("implicit collision factorisation failed: {e}"),
            }
        })?;
        let n = eq.len();
        Ok(Integrator {
            eq,
            ops,
            splitting: cfg.splitting,
            dt,
            clip_negative: cfg.clip_negative,
            clip_log: ClipLog::default(),
            stability,
            collision,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            stage: vec![0.0; n],
        })
    }

    fn collide_backward_euler(&self, h: &mut [f64]) {
        let np = self.eq.np();
        h.par_chunks_mut(np)
            .for_each(|row| self.collision.backward_euler_row(row));
    }

    fn collide_half_cn(&self, h: &mut [f64]) {
        let np = self.eq.np();
        h.par_chunks_mut(np).for_each_init(
            || vec![0.0; np],
            |s, row| self.collision.crank_nicolson_row(row, s),
        );
    }

    /// SSP-RK3 for h_t = -T h over dt.
    fn transport_rk3(&mut self, h: &mut [f64]) {
        let dt = self.dt;
        let t = &self.ops.transport;
        t.apply(h, &mut self.k1);
        self.stage
            .par_iter_mut()
            .zip(h.par_iter())
            .zip(self.k1.par_iter())
            .for_each(|((s, h), k)| *s = h - dt * k);
        t.apply(&self.stage, &mut self.k2);
        self.stage
            .par_iter_mut()
            .zip(h.par_iter())
            .zip(self.k2.par_iter())
            .for_each(|((s, h), k)| *s = 0.75 * h + 0.25 * (*s - dt * k));
        t.apply(&self.stage, &mut self.k2);
        h.par_iter_mut()
            .zip(self.stage.par_iter())
            .zip(self.k2.par_iter())
            .for_each(|((h, s), k)| *h = (*h + 2.0 * (s - dt * k)) / 3.0);
    }

    /// Advances h by one step.
    pub fn step_relative(&mut self, h: &mut [f64]) {
        match self.splitting {
            Splitting::Lie => {
                self.transport_rk3(h);
                self.collide_backward_euler(h);
            }
            Splitting::Strang => {
                self.collide_half_cn(h);
                self.transport_rk3(h);
                self.collide_half_cn(h);
            }
            Splitting::Imex => {
                self.ops.transport.apply(h, &mut self.k1);
                let dt = self.dt;
                h.par_iter_mut()
                    .zip(self.k1.par_iter())
                    .for_each(|(h, k)| *h -= dt * k);
                self.collide_backward_euler(h);
            }
        }
        if self.clip_negative {
            self.clip(h);
        }
    }

    /// f < 0 means h < -1.
    fn clip(&mut self, h: &mut [f64]) {
        let w = &self.eq.cell_weight;
        let (cells, added, worst) = h
            .par_iter_mut()
            .zip(w.par_iter())
            .zip(self.eq.f_inf.par_iter())
            .map(|((h, w), g)| {
                if *h < -1.0 {
                    let f = g * (1.0 + *h);
                    let m = -w * (1.0 + *h);
                    *h = -1.0;
                    (1usize, m, f)
                } else {
                    (0, 0.0, 0.0)
                }
            })
            .reduce(
                || (0, 0.0, 0.0),
                |a, b| (a.0 + b.0, a.1 + b.1, a.2.min(b.2)),
            );
        if cells > 0 {
            let log = &mut self.clip_log;
            log.steps_with_clipping += 1;
            log.cells += cells;
            log.mass_added += added;
            log.min_density = log.min_density.min(worst);
        }
    }

    /// Runs `steps` steps, calling `observe(step, t, h)` after each one.
    pub fn run<F>(&mut self, h: &mut [f64], steps: usize, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, f64, &[f64]) -> Result<()>,
    {
        for s in 1..=steps {
            self.step_relative(h);
            let t = s as f64 * self.dt;
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite value in h".into()).at_time(t));
            }
            observe(s, t, h).map_err(|e| e.at_time(t))?;
        }
        Ok(())
    }
}

/// Relative density h = f/f∞ - 1 of an absolute density.
pub fn to_relative(f: &PhaseField, eq: &EquilibriumState) -> Result<Vec<f64>> {
    f.check_shape(&eq.grid)?;
    if f.kind != FieldKind::AbsoluteDensity {
        return Err(Error::Dimension("expected an absolute density".into()));
    }
    Ok(f.values
        .iter()
        .zip(&eq.f_inf)
        .map(|(f, g)| f / g - 1.0)
        .collect())
}

pub fn to_absolute(h: &[f64], eq: &EquilibriumState) -> PhaseField {
    PhaseField {
        values: h
            .iter()
            .zip(&eq.f_inf)
            .map(|(h, g)| g * (1.0 + h))
            .collect(),
        nx: eq.nx(),
        np: eq.np(),
        kind: FieldKind::AbsoluteDensity,
    }
}

/// Σ wx wp f.
pub fn mass(f: &PhaseField, eq: &EquilibriumState) -> f64 {
    let ones = vec![1.0; f.values.len()];
    eq.grid.integrate_product(&f.values, &ones)
}

/// One step of the full equation for an absolute density of unit mass.
pub fn step(
    f: &PhaseField,
    eq: &EquilibriumState,
    ops: &Operators,
    cfg: &SolverConfig,
) -> Result<PhaseField> {
    let m = mass(f, eq);
    if (m - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("step expects unit mass, got {m}")));
    }
    let mut h = to_relative(f, eq)?;
    let mut integ = Integrator::new(eq, ops, cfg)?;
    integ.step_relative(&mut h);
    Ok(to_absolute(&h, eq))
}

/// h₀ for an initial condition, normalised to unit mass.
pub fn initial_relative(ic: &InitialCondition, eq: &EquilibriumState) -> Result<Vec<f64>> {
    let (nx, np) = (eq.nx(), eq.np());
    let xs = &eq.grid.x.nodes;
    let ps = &eq.grid.p.nodes;
    let c = eq.light_speed;
    // unnormalised f₀/f∞
    let ratio: Vec<f64> = match ic {
        InitialCondition::ShiftedMaxwellian { x0, p_shift } => (0..nx * np)
            .map(|n| {
                let (x, p) = (xs[n / np], ps[n % np]);
                (x0 * x.tanh() + kinetic_exponent(p, c) - kinetic_exponent(p - p_shift, c)).exp()
            })
            .collect(),
        InitialCondition::DoubleBump => (0..nx * np)
            .map(|n| {
                let (x, p) = (xs[n / np], ps[n % np]);
                let g = |a: f64, b: f64| (-2.0 * ((x - a).powi(2) + (p - b).powi(2))).exp();
                1.0 + g(1.0, 1.0) + g(-1.0, -1.0)
            })
            .collect(),
        InitialCondition::RoughIndicator {
            x_lo,
            x_hi,
            p_lo,
            p_hi,
        } => {
            if !(x_lo < x_hi && p_lo < p_hi) {
                return Err(Error::Config("empty indicator rectangle".into()));
            }
            let cover = |nodes: &[f64], h: f64, lo: f64, hi: f64| -> Vec<f64> {
                nodes
                    .iter()
                    .map(|&z| ((z + 0.5 * h).min(hi) - (z - 0.5 * h).max(lo)).max(0.0) / h)
                    .collect()
            };
            let cx = cover(xs, eq.grid.x.spacing, *x_lo, *x_hi);
            let cp = cover(ps, eq.grid.p.spacing, *p_lo, *p_hi);
            if cx.iter().all(|&v| v == 0.0) || cp.iter().all(|&v| v == 0.0) {
                return Err(Error::Config("indicator rectangle misses the grid".into()));
            }
            (0..nx * np)
                .map(|n| cx[n / np] * cp[n % np] / eq.f_inf[n])
                .collect()
        }
        InitialCondition::CustomFile { path } => {
            let f = crate::report::read_field_file(path, eq)?;
            if f.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "{} holds negative or non-finite densities",
                    path.display()
                )));
            }
            f.iter().zip(&eq.f_inf).map(|(f, g)| f / g).collect()
        }
    };
    let total: Vec<f64> = ratio
        .iter()
        .zip(&eq.cell_weight)
        .map(|(r, w)| r * w)
        .collect();
    let m = pairwise_sum(&total);
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Config(format!("initial condition has mass {m}")));
    }
    Ok(ratio.into_iter().map(|r| r / m - 1.0).collect())
}

/// Run metadata carried next to the diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub initial_condition: String,
    pub splitting: Splitting,
    pub dt: f64,
    pub steps: usize,
    pub stability: Option<StabilityReport>,
    pub clip: ClipLog,
    pub max_mass_drift: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub meta: TrajectoryMeta,
}

impl TrajectoryRecord {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.diagnostics.iter().map(|d| d.column(name)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub solver: SolverConfig,
    pub lyapunov: Option<LyapunovConfig>,
}

/// Integrates from the configured initial condition and records every
/// functional at the scheduled steps. The last relative density is returned
/// alongside the record.
pub fn run_on(
    cfg: &SimulationConfig,
    eq: &EquilibriumState,
    ops: &Operators,
) -> Result<(TrajectoryRecord, Vec<f64>)> {
    let h0 = initial_relative(&cfg.solver.initial_condition, eq)?;
    run_from(cfg, eq, ops, h0)
}

pub fn run_from(
    cfg: &SimulationConfig,
    eq: &EquilibriumState,
    ops: &Operators,
    mut h: Vec<f64>,
) -> Result<(TrajectoryRecord, Vec<f64>)> {
    if h.len() != eq.len() {
        return Err(Error::Dimension(
            "initial field does not match the grid".into(),
        ));
    }
    let ctx = FunctionalContext::new(eq, ops, cfg.lyapunov)?;
    let mut integ = Integrator::new(eq, ops, &cfg.solver)?;
    let (steps, dt) = cfg.solver.steps();
    let schedule = cfg.solver.record_steps();
    let mut next = 0;
    let mut diagnostics = Vec::with_capacity(schedule.len());
    let mut max_drift = 0.0f64;
    let first = ctx.record(0.0, &h)?;
    let m0 = first.mass;
    diagnostics.push(first);
    next += 1;
    integ.run(&mut h, steps, |s, t, h| {
        if next < schedule.len() && schedule[next] == s {
            let rec = ctx.record(t, h)?;
            max_drift = max_drift.max((rec.mass - m0).abs());
            diagnostics.push(rec);
            next += 1;
        }
        Ok(())
    })?;
    let meta = TrajectoryMeta {
        initial_condition: cfg.solver.initial_condition.label(),
        splitting: cfg.solver.splitting,
        dt,
        steps,
        stability: Some(integ.stability.clone()),
        clip: integ.clip_log.clone(),
        max_mass_drift: max_drift,
    };
    let times = diagnostics.iter().map(|d| d.t).collect();
    Ok((
        TrajectoryRecord {
            times,
            diagnostics,
            meta,
        },
        h,
    ))
}

/// Builds the equilibrium and operators on `grid` and runs the simulation.
pub fn run_simulation(
    cfg: &SimulationConfig,
    v: &PotentialSpec,
    grid: &PhaseGrid,
    c: f64,
) -> Result<TrajectoryRecord> {
    let eq = build_equilibrium(grid, v, c)?;
    let ops = Operators::new(&eq, cfg.solver.flux, cfg.solver.transport);
    Ok(run_on(cfg, &eq, &ops)?.0)
}

/// Momentum-only problem ∂t ϱ = ∂p(D ∂p ϱ + p ϱ / ...) on the momentum axis
/// of `eq`, written for h = ϱ/M - 1. Strang uses Crank-Nicolson, the other
/// splittings backward Euler. Records mass, ‖h‖_{L²(M)}, the relative
/// entropy and the Dirichlet form.
pub fn solve_homogeneous(
    rho0: &[f64],
    eq: &EquilibriumState,
    cfg: &SolverConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let np = eq.np();
    if rho0.len() != np {
        return Err(Error::Dimension(format!(
            "initial density has {} values, momentum grid {np}",
            rho0.len()
        )));
    }
    if rho0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("initial density must be nonnegative".into()));
    }
    let m = eq.grid.p.integrate(rho0);
    if (m - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!(
            "initial density has mass {m}, expected 1"
        )));
    }
    let coll = CollisionOperator::for_equilibrium(eq, cfg.flux);
    let (steps, dt) = cfg.steps();
    let splitting = if cfg.splitting == Splitting::Strang {
        Splitting::Strang
    } else {
        Splitting::Lie
    };
    let stepper = CollisionStepper::new(&coll, dt, splitting)?;
    let mut h: Vec<f64> = rho0
        .iter()
        .zip(&eq.maxwellian)
        .map(|(r, m)| r / m - 1.0)
        .collect();
    let mut scratch = vec![0.0; np];
    let record = |t: f64, h: &[f64]| {
        let w = &coll.mass;
        let l2: Vec<f64> = h.iter().zip(w).map(|(h, w)| w * h * h).collect();
        let ms: Vec<f64> = h.iter().zip(w).map(|(h, w)| w * (1.0 + h)).collect();
        let ent: Vec<f64> = h
            .iter()
            .zip(w)
            .map(|(&h, w)| {
                if h <= -1.0 {
                    0.0
                } else {
                    w * (1.0 + h) * h.ln_1p()
                }
            })
            .collect();
        DiagnosticsRecord {
            t,
            mass: pairwise_sum(&ms),
            l2: pairwise_sum(&l2).sqrt(),
            entropy: pairwise_sum(&ent),
            dirichlet: coll.dirichlet_row(h),
            ..Default::default()
        }
    };
    let schedule = cfg.record_steps();
    let mut diagnostics = vec![record(0.0, &h)];
    let m0 = diagnostics[0].mass;
    let mut max_drift = 0.0f64;
    let mut next = 1;
    for s in 1..=steps {
        match splitting {
            Splitting::Strang => {
                stepper.crank_nicolson_row(&mut h, &mut scratch);
                stepper.crank_nicolson_row(&mut h, &mut scratch);
            }
            _ => stepper.backward_euler_row(&mut h),
        }
        if next < schedule.len() && schedule[next] == s {
            let rec = record(s as f64 * dt, &h);
            max_drift = max_drift.max((rec.mass - m0).abs());
            diagnostics.push(rec);
            next += 1;
        }
    }
    Ok(TrajectoryRecord {
        times: diagnostics.iter().map(|d| d.t).collect(),
        diagnostics,
        meta: TrajectoryMeta {
            initial_condition: "momentum profile".into(),
            splitting,
            dt,
            steps,
            stability: None,
            clip: ClipLog::default(),
            max_mass_drift: max_drift,
        },
    })
}

/// Normalised M_c(p - s) on the momentum axis of `eq`.
pub fn shifted_maxwellian_p(eq: &EquilibriumState, shift: f64) -> Vec<f64> {
    let c = eq.light_speed;
    let raw: Vec<f64> = eq
        .grid
        .p
        .nodes
        .iter()
        .map(|&p| (-kinetic_exponent(p - shift, c)).exp())
        .collect();
    let z = eq.grid.p.integrate(&raw);
    raw.into_iter().map(|v| v / z).collect()
}
