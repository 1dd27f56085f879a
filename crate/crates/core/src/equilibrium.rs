//! Discrete steady states ρ∞ ⊗ M_c and the Bakry-Emery constant curve κ₁(c).

use crate::error::{Error, Result};
use crate::grid::{AxisGrid, BoundaryKind, PhaseGrid};
use crate::linalg::{log_mean_from_logs, pairwise_sum};
use crate::potentials::{Potential1d, PotentialSpec};

/// Equilibrium tail exponent used for default truncation radii:
/// e^{-30} ≈ 1e-13 keeps the truncated mass below 1e-12.
pub const TAIL_EXPONENT: f64 = 30.0;

/// Relative density at the truncation edge above which the potential is
/// treated as not confining on this grid.
const EDGE_DENSITY_LIMIT: f64 = 1e-6;

pub fn default_p_radius(c: f64) -> f64 {
    let t = TAIL_EXPONENT;
    ((c + t / c).powi(2) - c * c).sqrt()
}

pub fn default_x_radius(v: &PotentialSpec) -> f64 {
    v.tail_radius(TAIL_EXPONENT)
}

/// c(√(c²+p²) - c) written without cancellation.
pub fn kinetic_exponent(p: f64, c: f64) -> f64 {
    c * p * p / ((c * c + p * p).sqrt() + c)
}

/// D_c(p) = √(1 + p²/c²); equals p₀ for c = 1.
pub fn diffusion_coeff(p: f64, c: f64) -> f64 {
    (1.0 + p * p / (c * c)).sqrt()
}

pub fn p0(p: f64) -> f64 {
    (1.0 + p * p).sqrt()
}

#[derive(Clone, Debug)]
pub struct EquilibriumState {
    pub grid: PhaseGrid,
    pub rho_inf: Vec<f64>,
    pub maxwellian: Vec<f64>,
    pub f_inf: Vec<f64>,
    pub z_x: f64,
    pub z_p: f64,
    pub light_speed: f64,
    /// log ρ∞ and log M, kept to build face values without underflow.
    pub log_rho: Vec<f64>,
    pub log_m: Vec<f64>,
    /// Log-mean face values; index k is the face left of node k, with the
    /// outermost faces taking the adjacent node value.
    pub rho_face: Vec<f64>,
    pub m_face: Vec<f64>,
    /// Cell weights W = wx·wp·f∞.
    pub cell_weight: Vec<f64>,
    pub x_weight: Vec<f64>,
    pub p_weight: Vec<f64>,
    pub potential: PotentialSpec,
}

fn faces(logs: &[f64], vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let mut out = Vec::with_capacity(n + 1);
    out.push(vals[0]);
    for k in 1..n {
        out.push(log_mean_from_logs(logs[k - 1], logs[k]));
    }
    out.push(vals[n - 1]);
    out
}

pub fn build_equilibrium(grid: &PhaseGrid, v: &PotentialSpec, c: f64) -> Result<EquilibriumState> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!(
            "light speed must be positive, got {c}"
        )));
    }
    v.validate()?;
    let vx: Vec<f64> = grid.x.nodes.iter().map(|&x| v.value(x)).collect();
    let vmin = vx.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = vx.iter().map(|e| -(e - vmin)).collect();
    let (rho_inf, z_x, log_rho) = normalise(&grid.x, &shifted)
        .map_err(|e| Error::Construction(format!("spatial density: {e}")))?;
    let edge = rho_inf[0].max(rho_inf[rho_inf.len() - 1]);
    let peak = rho_inf.iter().cloned().fold(0.0, f64::max);
    if edge > EDGE_DENSITY_LIMIT * peak {
        return Err(Error::Construction(format!(
            "e^(-V) not decaying on the grid: edge/peak = {:e}; potential not confining on radius {}",
            edge / peak,
            grid.x.truncation_radius
        )));
    }
    let kin: Vec<f64> = grid
        .p
        .nodes
        .iter()
        .map(|&p| -kinetic_exponent(p, c))
        .collect();
    let (maxwellian, z_p, log_m) = normalise(&grid.p, &kin)?;
    let np = grid.np();
    let mut f_inf = Vec::with_capacity(grid.len());
    let mut cell_weight = Vec::with_capacity(grid.len());
    for i in 0..grid.nx() {
        for j in 0..np {
            f_inf.push(rho_inf[i] * maxwellian[j]);
            cell_weight.push(grid.x.weights[i] * grid.p.weights[j] * rho_inf[i] * maxwellian[j]);
        }
    }
    let x_weight = grid
        .x
        .weights
        .iter()
        .zip(&rho_inf)
        .map(|(w, r)| w * r)
        .collect();
    let p_weight = grid
        .p
        .weights
        .iter()
        .zip(&maxwellian)
        .map(|(w, m)| w * m)
        .collect();
    Ok(EquilibriumState {
        grid: grid.clone(),
        rho_face: faces(&log_rho, &rho_inf),
        m_face: faces(&log_m, &maxwellian),
        rho_inf,
        maxwellian,
        f_inf,
        z_x,
        z_p,
        light_speed: c,
        log_rho,
        log_m,
        cell_weight,
        x_weight,
        p_weight,
        potential: v.clone(),
    })
}

/// Normalises e^{logs} with the axis quadrature; returns (density, Z, log density).
fn normalise(axis: &AxisGrid, logs: &[f64]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let raw: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let z = axis.integrate(&raw);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Construction(format!("normaliser {z} not positive")));
    }
    let lz = z.ln();
    let log_d: Vec<f64> = logs.iter().map(|l| l - lz).collect();
    let d: Vec<f64> = log_d.iter().map(|l| l.exp()).collect();
    Ok((d, z, log_d))
}

impl EquilibriumState {
    pub fn nx(&self) -> usize {
        self.grid.nx()
    }

    pub fn np(&self) -> usize {
        self.grid.np()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// ∫ g M dp for a function of p.
    pub fn p_moment<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let v: Vec<f64> = self
            .grid
            .p
            .nodes
            .iter()
            .zip(&self.p_weight)
            .map(|(&p, w)| w * g(p))
            .collect();
        pairwise_sum(&v)
    }

    /// a = ∫ p²/p₀² M dp.
    pub fn a_coeff(&self) -> f64 {
        self.p_moment(|p| p * p / (1.0 + p * p))
    }

    /// ∫ p₀⁻³ M dp; equals a up to quadrature error by integration by parts.
    pub fn inv_p0_cubed_moment(&self) -> f64 {
        self.p_moment(|p| p0(p).powi(-3))
    }

    /// Σ W h, the f∞-weighted mean.
    pub fn mean(&self, h: &[f64]) -> f64 {
        self.grid.integrate_product(&self.f_inf, h)
    }

    pub fn l2_sq(&self, h: &[f64]) -> f64 {
        let np = self.np();
        let rows: Vec<f64> = (0..self.nx())
            .map(|i| {
                let r: Vec<f64> = (0..np)
                    .map(|j| self.cell_weight[i * np + j] * h[i * np + j] * h[i * np + j])
                    .collect();
                pairwise_sum(&r)
            })
            .collect();
        pairwise_sum(&rows)
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let np = self.np();
        let rows: Vec<f64> = (0..self.nx())
            .map(|i| {
                let r: Vec<f64> = (0..np)
                    .map(|j| self.cell_weight[i * np + j] * a[i * np + j] * b[i * np + j])
                    .collect();
                pairwise_sum(&r)
            })
            .collect();
        pairwise_sum(&rows)
    }

    /// Total mass Σ W (1 + h) of f = f∞(1 + h).
    pub fn mass_of_relative(&self, h: &[f64]) -> f64 {
        let total: Vec<f64> = self
            .cell_weight
            .iter()
            .zip(h)
            .map(|(w, h)| w * (1.0 + h))
            .collect();
        pairwise_sum(&total)
    }

    pub fn x_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let v: Vec<f64> = self
            .x_weight
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, a), b)| w * a * b)
            .collect();
        pairwise_sum(&v)
    }

    /// Tail-mass estimate: mass in the outermost cells, a proxy for the
    /// truncated mass beyond the radius.
    pub fn edge_mass(&self) -> (f64, f64) {
        let nx = self.nx();
        let np = self.np();
        let ex = self.grid.x.weights[0] * self.rho_inf[0]
            + self.grid.x.weights[nx - 1] * self.rho_inf[nx - 1];
        let ep = self.grid.p.weights[0] * self.maxwellian[0]
            + self.grid.p.weights[np - 1] * self.maxwellian[np - 1];
        (ex, ep)
    }
}

/// Homogeneous equilibrium on a p-axis alone (used by the homogeneous solver
/// and the κ₁(c) sweep). Returns (M_c, log M_c, faces).
pub fn maxwellian_on_axis(axis: &AxisGrid, c: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !(c > 0.0) {
        return Err(Error::Config(format!(
            "light speed must be positive, got {c}"
        )));
    }
    let kin: Vec<f64> = axis
        .nodes
        .iter()
        .map(|&p| -kinetic_exponent(p, c))
        .collect();
    let (m, _, lm) = normalise(axis, &kin)?;
    let f = faces(&lm, &m);
    Ok((m, lm, f))
}

/// Normalised density e^{logs}/Z on an axis with log-mean faces:
/// (density, log density, faces).
pub fn density_on_axis(axis: &AxisGrid, logs: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (d, _, ld) = normalise(axis, logs)?;
    let f = faces(&ld, &d);
    Ok((d, ld, f))
}

pub fn default_p_axis(c: f64, np: usize) -> Result<AxisGrid> {
    AxisGrid::uniform(default_p_radius(c), np, BoundaryKind::NoFlux)
}

/// κ₁(c) = 2 P_c(u*) with u* = (2c² + c√(4c⁴-39))/13 and
/// P_c(u) = (2cu³ - 13u² + 2c³u - c²)/(4cu³).
pub fn kappa1_bakry_emery(c: f64) -> Result<f64> {
    Ok(1.0 - kappa1_bakry_emery_deficit(c)?)
}

/// 1 - κ₁(c), which decays like c⁻⁵. The two O(c⁻³) terms of the closed form
/// cancel; here they are combined analytically, using
/// 13u - 2c³ = 2c² - 39c/(2c² + s) with s = √(4c⁴ - 39).
pub fn kappa1_bakry_emery_deficit(c: f64) -> Result<f64> {
    if !(c >= 2.0) || !c.is_finite() {
        return Err(Error::Domain(format!(
            "Bakry-Emery constant needs c >= 2, got {c}"
        )));
    }
    let s = (4.0 * c.powi(4) - 39.0).sqrt();
    let u = c * (2.0 * c + s) / 13.0;
    let lead = 2.0 * c * c - 39.0 * c / (2.0 * c * c + s);
    // divide by u in stages to stay in range for large c
    Ok((lead / u / u + c * c / u / u / u) / (2.0 * c))
}
