//! Certified constants: Poincaré gaps κ₁, κ₂, the coercivity constants λ_m,
//! λ_M, the auxiliary bound C_M, δ₀, the weighted Poincaré constants κ₃, κ₄,
//! and least-squares rate fits of recorded series.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    build_equilibrium, default_p_radius, default_x_radius, density_on_axis, diffusion_coeff,
    kinetic_exponent, EquilibriumState,
};
use crate::error::{Error, Result};
use crate::functionals::{AOperator, DiagnosticsRecord};
use crate::grid::{AxisGrid, BoundaryKind, PhaseGrid};
use crate::linalg::{power_iteration, WeightedTridiagEigen};
use crate::operators::{lift, projection_pi, FluxScheme, Operators, TransportScheme};
use crate::potentials::{AssumptionConstants, Potential1d, PotentialSpec};

/// Nodes of the refined axes used for κ₁ and κ₂.
pub const EIGEN_NODES: usize = 4001;
/// Largest phase grid for which C_M is assembled densely.
pub const CM_MAX_NODES: usize = 128 * 128;

/// First nonzero eigenvalue of ∫ k |u'|² dens against ∫ u² dens, with the
/// conductance built like the Chang-Cooper faces, plus its eigenvector.
pub fn weighted_gap<F: Fn(f64) -> f64>(
    axis: &AxisGrid,
    dens: &[f64],
    faces: &[f64],
    coeff: F,
) -> Result<(f64, Vec<f64>)> {
    let n = axis.len();
    let h = axis.spacing;
    let mut k = vec![0.0; n + 1];
    for f in 1..n {
        let pos = 0.5 * (axis.nodes[f - 1] + axis.nodes[f]);
        k[f] = coeff(pos) * faces[f] / h;
    }
    let diag: Vec<f64> = (0..n).map(|j| k[j] + k[j + 1]).collect();
    let off: Vec<f64> = (1..n).map(|f| -k[f]).collect();
    let mass: Vec<f64> = axis.weights.iter().zip(dens).map(|(w, d)| w * d).collect();
    WeightedTridiagEigen::new(&diag, &off, &mass)?.eigenvector(1)
}

/// κ₁ for the Jüttner density at light speed c on an axis of `n` nodes.
pub fn kappa1_on_axis(c: f64, n: usize) -> Result<f64> {
    let axis = AxisGrid::uniform(default_p_radius(c), n, BoundaryKind::NoFlux)?;
    let logs: Vec<f64> = axis
        .nodes
        .iter()
        .map(|&p| -kinetic_exponent(p, c))
        .collect();
    let (m, _, faces) = density_on_axis(&axis, &logs)?;
    Ok(weighted_gap(&axis, &m, &faces, |p| diffusion_coeff(p, c))?.0)
}

/// κ₁ on the momentum grid of an equilibrium (the discrete gap of L).
pub fn poincare_constant_p(eq: &EquilibriumState) -> Result<f64> {
    let c = eq.light_speed;
    Ok(weighted_gap(&eq.grid.p, &eq.maxwellian, &eq.m_face, |p| {
        diffusion_coeff(p, c)
    })?
    .0)
}

/// κ₂ on the spatial grid of an equilibrium.
pub fn poincare_constant_x(eq: &EquilibriumState) -> Result<f64> {
    Ok(weighted_gap(&eq.grid.x, &eq.rho_inf, &eq.rho_face, |_| 1.0)?.0)
}

/// κ₂ on a refined axis with the same truncation radius.
pub fn kappa2_refined(v: &PotentialSpec, radius: f64, n: usize) -> Result<f64> {
    let axis = AxisGrid::uniform(radius, n, BoundaryKind::NoFlux)?;
    let logs: Vec<f64> = axis.nodes.iter().map(|&x| -v.value(x)).collect();
    let (rho, _, faces) = density_on_axis(&axis, &logs)?;
    Ok(weighted_gap(&axis, &rho, &faces, |_| 1.0)?.0)
}

/// λ_M = κ₂ ∫p₀⁻³M, the constant for which ‖TΠu‖² ≥ λ_M‖u‖² follows from
/// ‖TΠu‖² = a‖u'‖² and a = ∫p₀⁻³M.
pub fn lambda_macro(eq: &EquilibriumState, kappa2: f64) -> Result<f64> {
    if !(kappa2 > 0.0) {
        return Err(Error::Domain(format!(
            "kappa2 must be positive, got {kappa2}"
        )));
    }
    Ok(kappa2 * eq.inv_p0_cubed_moment())
}

/// κ₂ / ∫p₀⁻³M, the printed form.
pub fn lambda_macro_as_printed(eq: &EquilibriumState, kappa2: f64) -> Result<f64> {
    if !(kappa2 > 0.0) {
        return Err(Error::Domain(format!(
            "kappa2 must be positive, got {kappa2}"
        )));
    }
    Ok(kappa2 / eq.inv_p0_cubed_moment())
}

/// δ₀ = min{2, λ_m, 4λ_mλ_M / (4λ_M + C_M²(1 + λ_M))}.
pub fn delta0(lambda_m: f64, lambda_big: f64, cm: f64) -> Result<f64> {
    if !(lambda_m > 0.0) || !(lambda_big > 0.0) || !(cm >= 0.0) {
        return Err(Error::Domain(format!(
            "delta0 needs positive inputs, got lambda_m={lambda_m}, lambda_M={lambda_big}, C_M={cm}"
        )));
    }
    let q = 4.0 * lambda_m * lambda_big / (4.0 * lambda_big + cm * cm * (1.0 + lambda_big));
    Ok(2f64.min(lambda_m).min(q))
}

/// κ₃ = (1-c₂)κ₂ / (2(c₁+2κ₂)), the value produced by the proof's chain of
/// inequalities.
pub fn kappa3(c1: f64, c2: f64, kappa2: f64) -> Result<f64> {
    check_k3_inputs(c1, c2, kappa2)?;
    Ok((1.0 - c2) * kappa2 / (2.0 * (c1 + 2.0 * kappa2)))
}

/// κ₃ = (1-c₂)(c₁+2κ₂)/(8κ₂), the printed form.
pub fn kappa3_printed(c1: f64, c2: f64, kappa2: f64) -> Result<f64> {
    check_k3_inputs(c1, c2, kappa2)?;
    Ok((1.0 - c2) * (c1 + 2.0 * kappa2) / (8.0 * kappa2))
}

fn check_k3_inputs(c1: f64, c2: f64, kappa2: f64) -> Result<()> {
    if !(c2 < 1.0) {
        return Err(Error::Domain(format!("c2 = {c2} must be below 1")));
    }
    if !(kappa2 > 0.0) || !(c1 >= 0.0) {
        return Err(Error::Domain(
            "kappa2 must be positive and c1 nonnegative".into(),
        ));
    }
    Ok(())
}

/// κ₄⁻¹ = 4κ₂⁻¹‖V₀‖⁴ + 8c₃²κ₃⁻² + 4κ₃⁻¹ with ‖V₀‖ the L²(ρ∞) norm.
pub fn kappa4_inverse(kappa2: f64, v0_norm_sq: f64, c3: f64, kappa3: f64) -> f64 {
    4.0 * v0_norm_sq * v0_norm_sq / kappa2 + 8.0 * c3 * c3 / (kappa3 * kappa3) + 4.0 / kappa3
}

/// κ₄⁻¹ = 4κ₂⁻¹‖V₀‖⁴ + 8c₃²κ₃⁻¹ + 4, the printed form.
pub fn kappa4_inverse_printed(kappa2: f64, v0_norm_sq: f64, c3: f64, kappa3: f64) -> f64 {
    4.0 * v0_norm_sq * v0_norm_sq / kappa2 + 8.0 * c3 * c3 / kappa3 + 4.0
}

/// ‖V₀‖² in L²(ρ∞) = ∫ (1 + V'²) ρ∞.
pub fn v0_norm_sq(eq: &EquilibriumState) -> f64 {
    let g: Vec<f64> = eq
        .grid
        .x
        .nodes
        .iter()
        .map(|&x| 1.0 + eq.potential.grad(x).powi(2))
        .collect();
    eq.grid.x.integrate(
        &g.iter()
            .zip(&eq.rho_inf)
            .map(|(g, r)| g * r)
            .collect::<Vec<_>>(),
    )
}

/// Norms of A T(I-Π) and A L on the dense coarse-grid assembly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmEstimate {
    pub value: f64,
    pub transport_part: f64,
    pub collision_part: f64,
    pub nx: usize,
    pub np: usize,
}

/// Estimates C_M = ‖AT(I-Π)‖ + ‖AL‖ on an n×n grid. Both operators map into
/// x-functions, so each is an nx × N matrix; its norm is the top singular
/// value in the weighted inner products, found by power iteration on the
/// nx × nx Gram matrix.
pub fn estimate_cm(v: &PotentialSpec, c: f64, n: usize) -> Result<CmEstimate> {
    if n * n > CM_MAX_NODES {
        return Err(Error::Size(format!(
            "C_M assembly on {n}x{n} exceeds {CM_MAX_NODES} nodes; use a coarser grid"
        )));
    }
    let g = PhaseGrid::uniform(default_x_radius(v), n, default_p_radius(c), n)?;
    let eq = build_equilibrium(&g, v, c)?;
    estimate_cm_on(&eq)
}

pub fn estimate_cm_on(eq: &EquilibriumState) -> Result<CmEstimate> {
    let (nx, np) = (eq.nx(), eq.np());
    let total = nx * np;
    if total > CM_MAX_NODES {
        return Err(Error::Size(format!(
            "C_M assembly on {total} nodes exceeds {CM_MAX_NODES}"
        )));
    }
    let ops = Operators::new(eq, FluxScheme::ChangCooper, TransportScheme::Central);
    let a = AOperator::new(eq, &ops.transport)?;
    let (bt, bl) = cm_columns(eq, &ops, &a);
    let sx: Vec<f64> = eq.x_weight.iter().map(|v| v.sqrt()).collect();
    let sw: Vec<f64> = eq.cell_weight.iter().map(|v| 1.0 / v.sqrt()).collect();
    let norm = |b: &DMatrix<f64>| -> f64 {
        let m = DMatrix::from_fn(nx, total, |r, k| sx[r] * b[(r, k)] * sw[k]);
        let gram = &m * m.transpose();
        let lam = power_iteration(
            nx,
            |x, y| {
                for r in 0..nx {
                    y[r] = (0..nx).map(|c| gram[(r, c)] * x[c]).sum();
                }
            },
            1e-12,
            20000,
        );
        lam.max(0.0).sqrt()
    };
    let t = norm(&bt);
    let l = norm(&bl);
    Ok(CmEstimate {
        value: t + l,
        transport_part: t,
        collision_part: l,
        nx,
        np,
    })
}

/// Columns of A T(I-Π) and A L as nx × N matrices.
pub fn cm_columns(
    eq: &EquilibriumState,
    ops: &Operators,
    a: &AOperator,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, np) = (eq.nx(), eq.np());
    let total = nx * np;
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|k| {
            let mut e = vec![0.0; total];
            e[k] = 1.0;
            let pe = lift(&projection_pi(&e, eq), np);
            let q: Vec<f64> = e.iter().zip(&pe).map(|(a, b)| a - b).collect();
            let mut t = vec![0.0; total];
            ops.transport.apply(&q, &mut t);
            let mut l = vec![0.0; total];
            ops.collision.apply(&e, &mut l);
            (
                a.apply(&t, eq, &ops.transport),
                a.apply(&l, eq, &ops.transport),
            )
        })
        .collect();
    let bt = DMatrix::from_fn(nx, total, |r, k| cols[k].0[r]);
    let bl = DMatrix::from_fn(nx, total, |r, k| cols[k].1[r]);
    (bt, bl)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypocoercivityConstants {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa3_printed: f64,
    pub kappa4_printed: f64,
    pub lambda_m: f64,
    pub lambda_big_m: f64,
    pub lambda_big_m_printed: f64,
    pub c_m_estimate: f64,
    pub delta0: f64,
    pub a_coeff: f64,
    /// discrete gaps on the simulation grid, used for operator checks
    pub kappa1_grid: f64,
    pub kappa2_grid: f64,
    pub v0_norm_sq: f64,
    pub kappa1_bakry_emery: Option<f64>,
}

impl HypocoercivityConstants {
    /// All constants for an equilibrium; C_M is estimated on a cm_n × cm_n grid.
    pub fn compute(
        eq: &EquilibriumState,
        assumption: &AssumptionConstants,
        cm_n: usize,
    ) -> Result<Self> {
        let c = eq.light_speed;
        let kappa1 = kappa1_on_axis(c, EIGEN_NODES)?;
        let kappa2 = kappa2_refined(&eq.potential, eq.grid.x.truncation_radius, EIGEN_NODES)?;
        let kappa1_grid = poincare_constant_p(eq)?;
        let kappa2_grid = poincare_constant_x(eq)?;
        let lambda_big_m = lambda_macro(eq, kappa2)?;
        let cm = estimate_cm(&eq.potential, c, cm_n)?;
        let k3 = kappa3(assumption.c1, assumption.c2, kappa2)?;
        let k3p = kappa3_printed(assumption.c1, assumption.c2, kappa2)?;
        let v0n = v0_norm_sq(eq);
        Ok(HypocoercivityConstants {
            kappa1,
            kappa2,
            kappa3: k3,
            kappa4: 1.0 / kappa4_inverse(kappa2, v0n, assumption.c3, k3),
            kappa3_printed: k3p,
            kappa4_printed: 1.0 / kappa4_inverse_printed(kappa2, v0n, assumption.c3, k3p),
            lambda_m: kappa1,
            lambda_big_m,
            lambda_big_m_printed: lambda_macro_as_printed(eq, kappa2)?,
            c_m_estimate: cm.value,
            delta0: delta0(kappa1, lambda_big_m, cm.value)?,
            a_coeff: eq.a_coeff(),
            kappa1_grid,
            kappa2_grid,
            v0_norm_sq: v0n,
            kappa1_bakry_emery: crate::equilibrium::kappa1_bakry_emery(c).ok(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitModel {
    Exponential,
    PowerLaw { exponent: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateFit {
    /// decay rate: -slope of ln v against t, or against ln t for power laws
    pub rate: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub model: FitModel,
    pub samples: usize,
}

impl RateFit {
    pub fn accepted(&self) -> bool {
        self.r_squared >= 0.98
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Exponential,
    PowerLaw,
}

/// Least-squares fit in log space. Without a window the first 10% of the
/// horizon is dropped.
pub fn fit_series(
    t: &[f64],
    v: &[f64],
    model: ModelKind,
    window: Option<(f64, f64)>,
) -> Result<RateFit> {
    if t.len() != v.len() || t.is_empty() {
        return Err(Error::Fit(
            "time and value series differ in length or are empty".into(),
        ));
    }
    let (lo, hi) = window.unwrap_or_else(|| {
        let (t0, t1) = (t[0], t[t.len() - 1]);
        (t0 + 0.1 * (t1 - t0), t1)
    });
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ti, &vi) in t.iter().zip(v) {
        if ti < lo || ti > hi {
            continue;
        }
        if !(vi > 0.0) {
            return Err(Error::Fit(format!("nonpositive value {vi} at t = {ti}")));
        }
        let x = match model {
            ModelKind::Exponential => ti,
            ModelKind::PowerLaw => {
                if !(ti > 0.0) {
                    return Err(Error::Fit("power-law fit needs t > 0".into()));
                }
                ti.ln()
            }
        };
        xs.push(x);
        ys.push(vi.ln());
    }
    if xs.len() < 10 {
        return Err(Error::Fit(format!(
            "{} samples in window [{lo}, {hi}], need 10",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate window".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    let model = match model {
        ModelKind::Exponential => FitModel::Exponential,
        ModelKind::PowerLaw => FitModel::PowerLaw { exponent: slope },
    };
    Ok(RateFit {
        rate: -slope,
        window: (lo, hi),
        r_squared: r2,
        model,
        samples: xs.len(),
    })
}

/// Fit of one diagnostics column.
pub fn fit_decay_rate(
    series: &[DiagnosticsRecord],
    column: &str,
    model: ModelKind,
    window: Option<(f64, f64)>,
) -> Result<RateFit> {
    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let v: Vec<f64> = series
        .iter()
        .map(|r| {
            r.column(column)
                .ok_or_else(|| Error::Config(format!("unknown column {column}")))
        })
        .collect::<Result<_>>()?;
    fit_series(&t, &v, model, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::kappa1_bakry_emery;
    use crate::potentials::assumption_constants;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eq_for(v: PotentialSpec, nx: usize, np: usize) -> EquilibriumState {
        let g = PhaseGrid::uniform(default_x_radius(&v), nx, default_p_radius(1.0), np).unwrap();
        build_equilibrium(&g, &v, 1.0).unwrap()
    }

    #[test]
    fn gaussian_surrogate_has_unit_gap() {
        let axis = AxisGrid::uniform(12.0, 4001, BoundaryKind::NoFlux).unwrap();
        let logs: Vec<f64> = axis.nodes.iter().map(|p| -0.5 * p * p).collect();
        let (m, _, f) = density_on_axis(&axis, &logs).unwrap();
        let (gap, vec) = weighted_gap(&axis, &m, &f, |_| 1.0).unwrap();
        assert!((gap - 1.0).abs() < 1e-3, "{gap}");
        // eigenvector ∝ p (first Hermite polynomial)
        let ratio: Vec<f64> = axis
            .nodes
            .iter()
            .zip(&vec)
            .filter(|(p, _)| p.abs() > 0.5 && p.abs() < 3.0)
            .map(|(p, v)| v / p)
            .collect();
        let r0 = ratio[0];
        assert!(ratio.iter().all(|r| (r / r0 - 1.0).abs() < 1e-3));
    }

    #[test]
    fn harmonic_kappa2_is_one() {
        let v = PotentialSpec::Harmonic;
        let k = kappa2_refined(&v, default_x_radius(&v), EIGEN_NODES).unwrap();
        assert!((k - 1.0).abs() < 1e-3, "{k}");
    }

    #[test]
    fn quartic_and_double_well_gaps() {
        let q = PotentialSpec::quartic();
        let r = default_x_radius(&q);
        let (a, b) = (
            kappa2_refined(&q, r, 2001).unwrap(),
            kappa2_refined(&q, r, 4001).unwrap(),
        );
        assert!(a > 0.0 && (a / b - 1.0).abs() < 0.01);
        // deep wells (V = 4(x²-1)², curvature 32 at the minima) against a
        // harmonic well of the same curvature
        let dw = PotentialSpec::DoubleWell { a: 4.0, b: 1.0 };
        let kdw = kappa2_refined(&dw, default_x_radius(&dw), EIGEN_NODES).unwrap();
        let h = PotentialSpec::Polynomial {
            coeffs: vec![0.0, 0.0, 16.0],
        };
        let kh = kappa2_refined(&h, default_x_radius(&h), EIGEN_NODES).unwrap();
        assert!((kh - 32.0).abs() < 0.1, "{kh}");
        assert!(kdw < kh);
    }

    #[test]
    fn kappa1_refinement_and_bakry_emery() {
        let (a, b) = (
            kappa1_on_axis(1.0, 1001).unwrap(),
            kappa1_on_axis(1.0, 2001).unwrap(),
        );
        assert!(a > 0.0 && (a / b - 1.0).abs() < 0.01);
        let k25 = kappa1_on_axis(2.5, EIGEN_NODES).unwrap();
        assert!(k25 >= kappa1_bakry_emery(2.5).unwrap());
        // large c approaches the classical gap
        assert!((kappa1_on_axis(1e3, EIGEN_NODES).unwrap() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn bakry_emery_value_exceeds_true_gap_for_large_c() {
        // Rayleigh quotient of u = p, ∫D M / ∫p² M, is an upper bound on the
        // gap; computed here by an independent Simpson rule
        for c in [5.0, 10.0, 100.0] {
            let r = default_p_radius(c);
            let n = 200000;
            let h = 2.0 * r / n as f64;
            let simpson = |f: &dyn Fn(f64) -> f64| {
                let mut s = f(-r) + f(r);
                for k in 1..n {
                    let x = -r + k as f64 * h;
                    s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
                }
                s * h / 3.0
            };
            let m = |p: f64| (-kinetic_exponent(p, c)).exp();
            let upper = simpson(&|p| diffusion_coeff(p, c) * m(p)) / simpson(&|p| p * p * m(p));
            let eig = kappa1_on_axis(c, EIGEN_NODES).unwrap();
            assert!(eig <= upper * (1.0 + 1e-6), "c={c}: {eig} {upper}");
            assert!(kappa1_bakry_emery(c).unwrap() > upper, "c={c}");
        }
    }

    #[test]
    fn delta0_arithmetic() {
        assert!((delta0(1.0, 1.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let cm = 10f64.powf(k as f64 / 5.0);
            let d = delta0(1.0, 1.0, cm).unwrap();
            assert!(d < last && d > 0.0 && d <= 2.0);
            last = d;
        }
        assert!(last < 1e-8);
        assert!(delta0(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lambda_macro_against_quadrature() {
        let eq = eq_for(PotentialSpec::Harmonic, 16, 1025);
        // independent composite Simpson on the Jüttner density at c = 1
        let r = default_p_radius(1.0);
        let n = 20000;
        let h = 2.0 * r / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let mut s = f(-r) + f(r);
            for k in 1..n {
                let x = -r + k as f64 * h;
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            s * h / 3.0
        };
        let z = simpson(&|p| (-((1.0 + p * p).sqrt() - 1.0)).exp());
        let m3 = simpson(&|p| (-((1.0 + p * p).sqrt() - 1.0)).exp() * (1.0 + p * p).powf(-1.5)) / z;
        let printed = lambda_macro_as_printed(&eq, 1.0).unwrap();
        assert!((printed - 1.0 / m3).abs() < 1e-5 * printed);
        assert!((lambda_macro(&eq, 1.0).unwrap() - m3).abs() < 1e-5);
        // a and ∫p₀⁻³M agree (integration by parts)
        assert!((eq.a_coeff() - m3).abs() < 1e-5);
    }

    #[test]
    fn kappa_formula_arithmetic() {
        assert!((kappa3_printed(1.0, 0.0, 1.0).unwrap() - 3.0 / 8.0).abs() < 1e-15);
        assert!((kappa4_inverse_printed(1.0, 2.0, 1.0, 3.0 / 8.0) - 124.0 / 3.0).abs() < 1e-12);
        assert!((kappa3(1.0, 0.0, 1.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((kappa4_inverse(1.0, 2.0, 1.0, 1.0 / 6.0) - 328.0).abs() < 1e-12);
        assert!(matches!(kappa3(1.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn printed_kappa3_fails_for_linear_test_function() {
        // h = x under ρ∞ = N(0,1): ∫h²V'² = 3 while ∫h'² = 1
        assert!(3.0 > 1.0 / kappa3_printed(1.0, 0.0, 1.0).unwrap());
        assert!(3.0 <= 1.0 / kappa3(1.0, 0.0, 1.0).unwrap());
    }

    #[test]
    fn cm_kernel_and_bound() {
        let eq = eq_for(PotentialSpec::Harmonic, 24, 24);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let a = AOperator::new(&eq, &ops.transport).unwrap();
        let (bt, bl) = cm_columns(&eq, &ops, &a);
        let est = estimate_cm_on(&eq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let np = eq.np();
        for k in 0..100 {
            let h: Vec<f64> = (0..eq.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ph = lift(&projection_pi(&h, &eq), np);
            let hv = nalgebra::DVector::from_vec(h.clone());
            let phv = nalgebra::DVector::from_vec(ph.clone());
            if k < 5 {
                // kernel on Π-range
                assert!((&bt * &phv).amax() < 1e-10 && (&bl * &phv).amax() < 1e-10);
            }
            let ut = &bt * &hv;
            let ul = &bl * &hv;
            let q: Vec<f64> = h.iter().zip(&ph).map(|(a, b)| a - b).collect();
            let lhs = eq.x_inner(ut.as_slice(), ut.as_slice()).sqrt()
                + eq.x_inner(ul.as_slice(), ul.as_slice()).sqrt();
            assert!(lhs <= est.value * eq.l2_sq(&q).sqrt() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn cm_power_iteration_matches_dense_eigen_and_is_stable() {
        let v = PotentialSpec::Harmonic;
        let a = estimate_cm(&v, 1.0, 48).unwrap();
        let b = estimate_cm(&v, 1.0, 64).unwrap();
        assert!(
            (a.value / b.value - 1.0).abs() < 0.1,
            "{} {}",
            a.value,
            b.value
        );
        assert!(estimate_cm(&v, 1.0, 256).unwrap_err().is_config());
    }

    #[test]
    fn constants_bundle_is_consistent() {
        let eq = eq_for(PotentialSpec::Harmonic, 64, 128);
        let ac = assumption_constants(&eq.potential, &eq.grid.x).unwrap();
        let k = HypocoercivityConstants::compute(&eq, &ac, 32).unwrap();
        assert!(k.delta0 > 0.0 && k.delta0 <= 2.0 && k.delta0 <= k.lambda_m);
        assert!((k.kappa2 - 1.0).abs() < 1e-3);
        assert!((k.kappa3 - 1.0 / 6.0).abs() < 1e-3);
        assert!((1.0 / k.kappa4 - 328.0).abs() < 1.0);
        assert!((k.v0_norm_sq - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rate_fits_on_exact_models() {
        let t: Vec<f64> = (0..100).map(|k| 0.05 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let f = fit_series(&t, &v, ModelKind::Exponential, None).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-6 && f.r_squared > 0.999999);
        let t: Vec<f64> = (1..100).map(|k| 0.01 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| t.powi(-3)).collect();
        let f = fit_series(&t, &v, ModelKind::PowerLaw, Some((0.05, 0.5))).unwrap();
        match f.model {
            FitModel::PowerLaw { exponent } => assert!((exponent + 3.0).abs() < 1e-6),
            _ => panic!(),
        }
        let bad: Vec<f64> = t.iter().map(|t| t - 0.5).collect();
        assert!(matches!(
            fit_series(&t, &bad, ModelKind::Exponential, None),
            Err(Error::Fit(_))
        ));
        assert!(fit_series(&t[..5], &v[..5], ModelKind::Exponential, None).is_err());
    }
}
