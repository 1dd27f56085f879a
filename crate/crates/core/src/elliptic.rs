//! The weighted elliptic problem u - (a/ρ∞)(ρ∞u')' = w on the x-grid with
//! no-flux ends, and sampled checks of its regularity bounds and of the two
//! weighted Poincaré inequalities they rest on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{
    kappa3, kappa3_printed, kappa4_inverse, kappa4_inverse_printed, v0_norm_sq,
};
use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, Tridiagonal, WeightedTridiagEigen};
use crate::potentials::{AssumptionConstants, Potential1d};

/// Tolerance on ∫wρ∞ relative to ‖w‖.
pub const MEAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticProblem {
    pub a_coeff: f64,
    pub rhs: Vec<f64>,
}

/// Dirichlet form ∫|u'|²ρ∞ on the x-axis as a symmetric tridiagonal K, with
/// the same log-mean faces as the equilibrium.
pub fn x_stiffness(eq: &EquilibriumState) -> Tridiagonal {
    let n = eq.nx();
    let h = eq.grid.x.spacing;
    let mut k = Tridiagonal::zeros(n);
    for f in 1..n {
        let c = eq.rho_face[f] / h;
        k.diag[f - 1] += c;
        k.diag[f] += c;
        k.lower[f] = -c;
        k.upper[f - 1] = -c;
    }
    k
}

/// Solution of S u + a K u = S w with S = diag(wx ρ∞).
///
/// The discrete system keeps the continuum identities exactly: ∫uρ∞ = ∫wρ∞,
/// ∫u²ρ∞ + 2a∫|u'|²ρ∞ ≤ ∫w²ρ∞ and ‖u‖∞ ≤ ‖w‖∞.
pub fn solve_elliptic(prob: &EllipticProblem, eq: &EquilibriumState) -> Result<Vec<f64>> {
    let n = eq.nx();
    if prob.rhs.len() != n {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, x-grid {n}",
            prob.rhs.len()
        )));
    }
    if !(prob.a_coeff > 0.0) || !prob.a_coeff.is_finite() {
        return Err(Error::Config(format!(
            "a = {} must be positive",
            prob.a_coeff
        )));
    }
    let norm = eq.x_inner(&prob.rhs, &prob.rhs).sqrt();
    let mean = eq.x_inner(&prob.rhs, &vec![1.0; n]);
    if mean.abs() > MEAN_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Config(format!(
            "right-hand side has ρ∞-mean {mean:e}, expected 0"
        )));
    }
    let s = &eq.x_weight;
    // rows divided by S: the tails of ρ∞ would otherwise give tiny pivots
    let mut sys = x_stiffness(eq).shifted(0.0, prob.a_coeff);
    for i in 0..n {
        sys.lower[i] /= s[i];
        sys.upper[i] /= s[i];
        sys.diag[i] = 1.0 + sys.diag[i] / s[i];
    }
    let mut u = prob.rhs.clone();
    sys.factor()?.solve_in_place(&mut u);
    Ok(u)
}

/// max |S u + aKu - S w| / max |S w|.
pub fn elliptic_residual(prob: &EllipticProblem, eq: &EquilibriumState, u: &[f64]) -> f64 {
    let n = eq.nx();
    let mut ku = vec![0.0; n];
    x_stiffness(eq).apply(u, &mut ku);
    let s = &eq.x_weight;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        let sw = s[i] * prob.rhs[i];
        worst = worst.max((s[i] * u[i] + prob.a_coeff * ku[i] - sw).abs());
        scale = scale.max(sw.abs());
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Constants entering the regularity bounds. Both κ₃, κ₄ (from the proof
/// chain) and the printed variants are kept.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightedConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa3_printed: f64,
    pub kappa4_printed: f64,
    /// ‖V₀‖² in L²(ρ∞)
    pub v0_norm_sq: f64,
}

impl WeightedConstants {
    pub fn new(
        eq: &EquilibriumState,
        assumption: &AssumptionConstants,
        kappa2: f64,
    ) -> Result<Self> {
        let (c1, c2, c3) = (assumption.c1, assumption.c2, assumption.c3);
        let k3 = kappa3(c1, c2, kappa2)?;
        let k3p = kappa3_printed(c1, c2, kappa2)?;
        let v0n = v0_norm_sq(eq);
        Ok(WeightedConstants {
            c1,
            c2,
            c3,
            kappa2,
            kappa3: k3,
            kappa4: 1.0 / kappa4_inverse(kappa2, v0n, c3, k3),
            kappa3_printed: k3p,
            kappa4_printed: 1.0 / kappa4_inverse_printed(kappa2, v0n, c3, k3p),
            v0_norm_sq: v0n,
        })
    }
}

/// C₁ for given (δ, ε); requires a - ε - δ/(2κ₄) > 0.
pub fn c1_constant(a: f64, k: &WeightedConstants, delta: f64, eps: f64) -> Result<f64> {
    if !(delta > 0.0 && eps > 0.0) {
        return Err(Error::Config(format!(
            "delta = {delta}, eps = {eps} must be positive"
        )));
    }
    let denom = a - eps - delta / (2.0 * k.kappa4);
    if !(denom > 0.0) {
        return Err(Error::Config(format!(
            "a - eps - delta/(2 kappa4) = {denom:e} is not positive for a = {a}, delta = {delta}, eps = {eps}"
        )));
    }
    let num = 1.0 / (2.0 * delta)
        + delta / (4.0 * a * k.kappa4)
        + 2.0 * k.c3 * k.c3 * a * a / eps * (1.0 + 1.0 / (2.0 * a * k.kappa3));
    Ok(num / denom)
}

/// C₂ = (√d/a + √C₁)², using ∫(u-w)²ρ∞ ≤ ∫w²ρ∞, which follows from testing
/// the equation with uρ∞.
pub fn c2_constant(a: f64, c1: f64, d: usize) -> f64 {
    let r = (d as f64).sqrt() / a + c1.sqrt();
    r * r
}

/// (δ, ε, C₁, fallback). Tries δ = ε = a/4; if that violates the positivity
/// constraint, minimises C₁ over δ = 2κ₄a·r, ε = a·s on a grid of (r, s) with
/// r + s < 1.
pub fn choose_delta_eps(a: f64, k: &WeightedConstants) -> Result<(f64, f64, f64, bool)> {
    if let Ok(c1) = c1_constant(a, k, 0.25 * a, 0.25 * a) {
        return Ok((0.25 * a, 0.25 * a, c1, false));
    }
    let n = 200;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 1..n {
        for j in 1..n - i {
            let r = i as f64 / n as f64;
            let s = j as f64 / n as f64;
            let (delta, eps) = (2.0 * k.kappa4 * a * r, a * s);
            if let Ok(c1) = c1_constant(a, k, delta, eps) {
                if best.is_none_or(|b| c1 < b.2) {
                    best = Some((delta, eps, c1));
                }
            }
        }
    }
    let (d, e, c) = best.ok_or_else(|| Error::Config("no admissible (delta, eps)".into()))?;
    Ok((d, e, c, true))
}

/// Face gradients (u_{f} - u_{f-1})/h for f = 1..n-1 and the face midpoints.
fn face_gradients(u: &[f64], eq: &EquilibriumState) -> Vec<(f64, f64, f64)> {
    let n = eq.nx();
    let h = eq.grid.x.spacing;
    let x = &eq.grid.x.nodes;
    (1..n)
        .map(|f| {
            (
                (u[f] - u[f - 1]) / h,
                0.5 * (x[f - 1] + x[f]),
                h * eq.rho_face[f],
            )
        })
        .collect()
}

/// ∫|u'|² g(x) ρ∞ with the face quadrature of K.
fn grad_integral<G: Fn(f64) -> f64>(u: &[f64], eq: &EquilibriumState, g: G) -> f64 {
    let terms: Vec<f64> = face_gradients(u, eq)
        .into_iter()
        .map(|(d, x, w)| w * d * d * g(x))
        .collect();
    pairwise_sum(&terms)
}

/// ∫u² g(x) ρ∞ with the node quadrature.
fn value_integral<G: Fn(f64) -> f64>(u: &[f64], eq: &EquilibriumState, g: G) -> f64 {
    let x = &eq.grid.x.nodes;
    let terms: Vec<f64> = (0..u.len())
        .map(|i| eq.x_weight[i] * u[i] * u[i] * g(x[i]))
        .collect();
    pairwise_sum(&terms)
}

/// ∫|u''|²ρ∞ from second differences at interior nodes.
fn hessian_integral(u: &[f64], eq: &EquilibriumState) -> f64 {
    let n = u.len();
    let h2 = eq.grid.x.spacing * eq.grid.x.spacing;
    let terms: Vec<f64> = (1..n - 1)
        .map(|i| {
            let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
            eq.x_weight[i] * d2 * d2
        })
        .collect();
    pairwise_sum(&terms)
}

/// First `count` nonconstant eigenfunctions of K v = λ S v, S-normalised.
pub fn weighted_laplacian_basis(
    eq: &EquilibriumState,
    count: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let k = x_stiffness(eq);
    if count + 1 > eq.nx() {
        return Err(Error::Config(format!(
            "basis of {count} functions on {} nodes",
            eq.nx()
        )));
    }
    let solver = WeightedTridiagEigen::new(&k.diag, &k.upper[..k.len() - 1], &eq.x_weight)?;
    (1..=count)
        .into_par_iter()
        .map(|m| solver.eigenvector(m))
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegularityRatios {
    pub eigenvalue: f64,
    /// ∫|u'|²|V'|²ρ∞ / ∫w²ρ∞
    pub gradient: f64,
    /// ∫|u''|²ρ∞ / ∫w²ρ∞
    pub hessian: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub a: f64,
    pub delta: f64,
    pub eps: f64,
    /// true when δ = ε = a/4 was infeasible and the grid search chose (δ, ε)
    pub fallback: bool,
    pub c1: f64,
    pub c2: f64,
    pub ratios: Vec<RegularityRatios>,
    pub max_gradient_ratio: f64,
    pub max_hessian_ratio: f64,
    pub max_residual: f64,
    pub passed: bool,
}

/// Solves the elliptic problem for the first `basis_size` eigenfunctions of
/// the weighted Laplacian and compares both regularity ratios with C₁, C₂.
pub fn verify_regularity(
    eq: &EquilibriumState,
    k: &WeightedConstants,
    a: f64,
    basis_size: usize,
    delta_eps: Option<(f64, f64)>,
) -> Result<RegularityReport> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("a = {a} must be positive")));
    }
    let (delta, eps, c1, fallback) = match delta_eps {
        Some((d, e)) => (d, e, c1_constant(a, k, d, e)?, false),
        None => choose_delta_eps(a, k)?,
    };
    let c2 = c2_constant(a, c1, 1);
    let basis = weighted_laplacian_basis(eq, basis_size)?;
    let v = &eq.potential;
    let ratios: Vec<RegularityRatios> = basis
        .par_iter()
        .map(|(lambda, w)| {
            let prob = EllipticProblem {
                a_coeff: a,
                rhs: w.clone(),
            };
            let u = solve_elliptic(&prob, eq)?;
            let wn = eq.x_inner(w, w);
            Ok(RegularityRatios {
                eigenvalue: *lambda,
                gradient: grad_integral(&u, eq, |x| v.grad(x).powi(2)) / wn,
                hessian: hessian_integral(&u, eq) / wn,
                residual: elliptic_residual(&prob, eq, &u),
            })
        })
        .collect::<Result<_>>()?;
    let max_g = ratios.iter().map(|r| r.gradient).fold(0.0, f64::max);
    let max_h = ratios.iter().map(|r| r.hessian).fold(0.0, f64::max);
    let max_r = ratios.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok(RegularityReport {
        a,
        delta,
        eps,
        fallback,
        c1,
        c2,
        passed: max_g <= c1 && max_h <= c2 && max_r <= 1e-10,
        ratios,
        max_gradient_ratio: max_g,
        max_hessian_ratio: max_h,
        max_residual: max_r,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoincareReport {
    pub kappa3: f64,
    pub kappa4: f64,
    pub samples: usize,
    /// max over samples of κ₃∫h²V'²ρ∞ / ∫h'²ρ∞ (≤ 1 means the inequality holds)
    pub max_ratio1: f64,
    /// same for the second inequality with κ₄
    pub max_ratio2: f64,
    /// the same ratios with the printed constants
    pub max_ratio1_printed: f64,
    pub max_ratio2_printed: f64,
    /// ∫|V'|²ρ∞ and its bound 2c₁/(2-c₂)
    pub grad_v_moment: f64,
    pub grad_v_bound: f64,
    pub passed: bool,
}

/// (∫h²V'²ρ∞ / ∫h'²ρ∞, ∫h²V₀²V'²ρ∞ / ∫h'²V₀²ρ∞) for a mean-zero h.
pub fn poincare_quotients(h: &[f64], eq: &EquilibriumState) -> (f64, f64) {
    let v = &eq.potential;
    let g2 = |x: f64| v.grad(x).powi(2);
    let l1 = value_integral(h, eq, g2);
    let r1 = grad_integral(h, eq, |_| 1.0);
    let l2 = value_integral(h, eq, |x| (1.0 + g2(x)) * g2(x));
    let r2 = grad_integral(h, eq, |x| 1.0 + g2(x));
    (l1 / r1, l2 / r2)
}

/// Both weighted Poincaré inequalities on `samples` random mean-zero
/// functions: random combinations of the first ten eigenfunctions of the
/// weighted Laplacian with coefficients decaying like 1/m, plus h = x - x̄.
pub fn verify_weighted_poincare(
    eq: &EquilibriumState,
    k: &WeightedConstants,
    samples: usize,
    seed: u64,
) -> Result<PoincareReport> {
    if !(k.c2 < 1.0) {
        return Err(Error::Domain(format!("c2 = {} must be below 1", k.c2)));
    }
    let basis = weighted_laplacian_basis(eq, 10.min(eq.nx() - 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = eq.nx();
    let mut funcs: Vec<Vec<f64>> = Vec::with_capacity(samples + 1);
    let x = &eq.grid.x.nodes;
    let xbar = eq.x_inner(x, &vec![1.0; n]);
    funcs.push(x.iter().map(|x| x - xbar).collect());
    for _ in 0..samples.saturating_sub(1) {
        let mut h = vec![0.0; n];
        for (m, (_, phi)) in basis.iter().enumerate() {
            let c: f64 = rng.gen_range(-1.0..1.0) / (m + 1) as f64;
            for (h, p) in h.iter_mut().zip(phi) {
                *h += c * p;
            }
        }
        funcs.push(h);
    }
    let q: Vec<(f64, f64)> = funcs
        .par_iter()
        .map(|h| poincare_quotients(h, eq))
        .collect();
    let max1 = q.iter().map(|r| r.0).fold(0.0, f64::max);
    let max2 = q.iter().map(|r| r.1).fold(0.0, f64::max);
    let v = &eq.potential;
    let ones = vec![1.0; n];
    let grad_v_moment = value_integral(&ones, eq, |x| v.grad(x).powi(2));
    let grad_v_bound = 2.0 * k.c1 / (2.0 - k.c2);
    let r1 = max1 * k.kappa3;
    let r2 = max2 * k.kappa4;
    Ok(PoincareReport {
        kappa3: k.kappa3,
        kappa4: k.kappa4,
        samples: funcs.len(),
        max_ratio1: r1,
        max_ratio2: r2,
        max_ratio1_printed: max1 * k.kappa3_printed,
        max_ratio2_printed: max2 * k.kappa4_printed,
        grad_v_moment,
        grad_v_bound,
        passed: r1 <= 1.0 && r2 <= 1.0 && grad_v_moment <= grad_v_bound * (1.0 + 1e-9),
    })
}
