//! The weight matrix P(x,p) of the gradient functional S_P, its derivatives,
//! the drift matrix Q, and the derivative sums bounded by θ₁..θ₄.
//!
//! Everything here is pointwise in (x,p) for general d. Derivatives are hand
//! differentiated closed forms; tests compare them with finite differences
//! and with the expanded forms written out in the appendix proofs.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::potentials::Potential1d;

/// Pointwise data of the potential needed by P.
#[derive(Clone, Debug)]
pub struct PotentialPoint {
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl PotentialPoint {
    pub fn v0(&self) -> f64 {
        (1.0 + self.grad.norm_squared()).sqrt()
    }

    /// ∇V₀ = ∂²V ∇V / V₀.
    pub fn grad_v0(&self) -> DVector<f64> {
        &self.hess * &self.grad / self.v0()
    }

    pub fn one_dim(v: &dyn Potential1d, x: f64) -> Self {
        PotentialPoint {
            grad: DVector::from_element(1, v.grad(x)),
            hess: DMatrix::from_element(1, 1, v.hess(x)),
        }
    }

    /// Separable extension V(x) = Σ V(x_k).
    pub fn separable(v: &dyn Potential1d, x: &DVector<f64>) -> Self {
        PotentialPoint {
            grad: x.map(|xi| v.grad(xi)),
            hess: DMatrix::from_diagonal(&x.map(|xi| v.hess(xi))),
        }
    }

    pub fn flat(d: usize) -> Self {
        PotentialPoint {
            grad: DVector::zeros(d),
            hess: DMatrix::zeros(d, d),
        }
    }
}

fn p0_of(p: &DVector<f64>) -> f64 {
    (1.0 + p.norm_squared()).sqrt()
}

fn outer(p: &DVector<f64>) -> DMatrix<f64> {
    p * p.transpose()
}

/// I - p⊗p/p₀², with diagonal entries (1 + Σ_{k≠i} p_k²)/p₀² to avoid the
/// cancellation in 1 - p_i²/p₀² at large |p|.
pub fn proj_x(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len();
    let p0sq = 1.0 + p.norm_squared();
    DMatrix::from_fn(d, d, |a, b| {
        if a == b {
            (1.0 + (0..d).filter(|&k| k != a).map(|k| p[k] * p[k]).sum::<f64>()) / p0sq
        } else {
            -p[a] * p[b] / p0sq
        }
    })
}

/// I + p⊗p.
pub fn proj_p(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len();
    DMatrix::identity(d, d) + outer(p)
}

pub(crate) fn blocks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> DMatrix<f64> {
    let d = a.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(a);
    m.view_mut((0, d), (d, d)).copy_from(b);
    m.view_mut((d, 0), (d, d)).copy_from(c);
    m.view_mut((d, d), (d, d)).copy_from(e);
    m
}

pub(crate) fn block_diag(a: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let z = DMatrix::zeros(d, d);
    blocks(a, &z, &z, e)
}

/// e_i pᵀ + p e_iᵀ = ∂_{p_i}(p⊗p).
fn e_i(p: &DVector<f64>, i: usize) -> DMatrix<f64> {
    let d = p.len();
    DMatrix::from_fn(d, d, |a, b| {
        (a == i) as u8 as f64 * p[b] + p[a] * (b == i) as u8 as f64
    })
}

/// e_i e_jᵀ + e_j e_iᵀ.
fn f_ij(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    m[(i, j)] += 1.0;
    m[(j, i)] += 1.0;
    m
}

fn kd(i: usize, j: usize) -> f64 {
    (i == j) as u8 as f64
}

/// P with ε₁ = ε/V₀ already folded in.
pub fn p_matrix(p: &DVector<f64>, eps1: f64) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let id = DMatrix::<f64>::identity(d, d);
    let a = proj_x(p) * (2.0 * eps1.powi(3) / p0.powi(3));
    let b = &id * (eps1 * eps1 / (p0 * p0));
    let e = proj_p(p) * (2.0 * eps1 / p0);
    blocks(&a, &b, &b, &e)
}

/// ∂_{p_i} P.
pub fn dp_matrix(p: &DVector<f64>, eps1: f64, i: usize) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let id = DMatrix::<f64>::identity(d, d);
    let pp = outer(p);
    let pi = p[i];
    let e3 = eps1.powi(3);
    let a = (&id * (-3.0 * pi / p0.powi(5)) + &pp * (5.0 * pi / p0.powi(7))
        - e_i(p, i) / p0.powi(5))
        * (2.0 * e3);
    let b = &id * (-2.0 * eps1 * eps1 * pi / p0.powi(4));
    let e = (proj_p(p) * (-pi / p0.powi(3)) + e_i(p, i) / p0) * (2.0 * eps1);
    blocks(&a, &b, &b, &e)
}

/// ∂²_{p_i p_j} P.
pub fn dpp_matrix(p: &DVector<f64>, eps1: f64, i: usize, j: usize) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let id = DMatrix::<f64>::identity(d, d);
    let pp = outer(p);
    let (pi, pj, dij) = (p[i], p[j], kd(i, j));
    let e3 = eps1.powi(3);
    let a = (&id * (15.0 * pi * pj / p0.powi(7) - 3.0 * dij / p0.powi(5))
        + &pp * (5.0 * (dij / p0.powi(7) - 7.0 * pi * pj / p0.powi(9)))
        + e_i(p, j) * (5.0 * pi / p0.powi(7))
        + e_i(p, i) * (5.0 * pj / p0.powi(7))
        - f_ij(d, i, j) / p0.powi(5))
        * (2.0 * e3);
    let b = &id * (-2.0 * eps1 * eps1 * (dij / p0.powi(4) - 4.0 * pi * pj / p0.powi(6)));
    let e = (proj_p(p) * (-(dij / p0.powi(3) - 3.0 * pi * pj / p0.powi(5)))
        - e_i(p, j) * (pi / p0.powi(3))
        - e_i(p, i) * (pj / p0.powi(3))
        + f_ij(d, i, j) / p0)
        * (2.0 * eps1);
    blocks(&a, &b, &b, &e)
}

/// ∂_{x_i} P: P11, P12, P22 scale like V₀⁻³, V₀⁻², V₀⁻¹.
pub fn dx_matrix(p: &DVector<f64>, v: &PotentialPoint, eps: f64, i: usize) -> DMatrix<f64> {
    let d = p.len();
    let v0 = v.v0();
    let dv0 = v.grad_v0()[i];
    let mut m = p_matrix(p, eps / v0);
    let r = -dv0 / v0;
    for a in 0..2 * d {
        for b in 0..2 * d {
            let k = match (a < d, b < d) {
                (true, true) => 3.0,
                (false, false) => 1.0,
                _ => 2.0,
            };
            m[(a, b)] *= k * r;
        }
    }
    m
}

/// The drift matrix Q of the S_P derivative identity.
pub fn q_matrix(p: &DVector<f64>, v: &PotentialPoint) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let px = proj_x(p);
    let z = DMatrix::zeros(d, d);
    let b = &px / p0;
    let e = DMatrix::identity(d, d) - &px * (d as f64 / p0);
    blocks(&z, &b, &(-&v.hess), &e)
}

/// D(p) as a 2d×2d block diag(0, D).
pub fn d_block(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len();
    block_diag(&DMatrix::zeros(d, d), &(proj_p(p) / p0_of(p)))
}

/// Lower and upper sandwich bounds of P (factors 1 and 3).
pub fn sandwich_bounds(p: &DVector<f64>, eps1: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p0 = p0_of(p);
    let a = proj_x(p) * (eps1.powi(3) / p0.powi(3));
    let e = proj_p(p) * (eps1 / p0);
    (block_diag(&a, &e), block_diag(&(&a * 3.0), &(&e * 3.0)))
}

/// Σ_{ij} ∂²P a_ij + Σ_i ∂_iP (Σ_j ∂_j a_ij - a_ij p_j/p₀), assembled from
/// the derivative matrices.
pub fn comp1_lhs(p: &DVector<f64>, eps1: f64) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let aij = (kd(i, j) + p[i] * p[j]) / p0;
            if aij != 0.0 {
                m += dpp_matrix(p, eps1, i, j) * aij;
            }
        }
        // Σ_j ∂_j a_ij - a_ij p_j/p₀, summed directly
        let mut coef = 0.0;
        for j in 0..d {
            let daij = (p[i] + kd(i, j) * p[j]) / p0 - (kd(i, j) + p[i] * p[j]) * p[j] / p0.powi(3);
            coef += daij - (kd(i, j) + p[i] * p[j]) * p[j] / (p0 * p0);
        }
        m += dp_matrix(p, eps1, i) * coef;
    }
    m
}

/// The same sum from the expanded closed forms in the appendix proof.
pub fn comp1_lhs_expanded(p: &DVector<f64>, eps1: f64) -> DMatrix<f64> {
    let d = p.len();
    let df = d as f64;
    let p0 = p0_of(p);
    let id = DMatrix::<f64>::identity(d, d);
    let pp = outer(p);
    let px = proj_x(p);
    let pq = proj_p(p);
    let (e1, e2, e3) = (eps1, eps1 * eps1, eps1.powi(3));
    let p2 = p.norm_squared();
    // Σ ∂²P a_ij
    let a = &px * (24.0 * e3 / p0.powi(4)) - &id * (e3 * (28.0 + 6.0 * df) / p0.powi(6))
        + &pp * (e3 * (60.0 + 10.0 * df) / p0.powi(8));
    let b = &id * (6.0 * e2 / p0.powi(3) - 2.0 * e2 * (df + 3.0) / p0.powi(5));
    let e = &id * (8.0 * e1 / (p0 * p0)) - &pq * (2.0 * e1 * (df + 2.0) / p0.powi(4));
    let second = blocks(&a, &b, &b, &e);
    // (d/p₀ - 1) Σ ∂_iP p_i
    let a = &id * (-6.0 * e3 * p2 / p0.powi(5)) - &pp * (4.0 * e3 / p0.powi(5))
        + &pp * (10.0 * e3 * p2 / p0.powi(7));
    let b = &id * (-2.0 * e2 * p2 / p0.powi(4));
    let e = &pq * (-2.0 * e1 * p2 / p0.powi(3)) + &pp * (4.0 * e1 / p0);
    let first = blocks(&a, &b, &b, &e) * (df / p0 - 1.0);
    second + first
}

/// Σ_i (p_i/p₀ ∂_{x_i}P - ∂_{x_i}V ∂_{p_i}P).
pub fn comp2_lhs(p: &DVector<f64>, v: &PotentialPoint, eps: f64) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let eps1 = eps / v.v0();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        m += dx_matrix(p, v, eps, i) * (p[i] / p0);
        if v.grad[i] != 0.0 {
            m -= dp_matrix(p, eps1, i) * v.grad[i];
        }
    }
    m
}

/// Block-diagonal right-hand sides of the two θ lemmas with unit θ.
pub fn comp1_bound(p: &DVector<f64>, eps1: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p0 = p0_of(p);
    (
        proj_x(p) * (2.0 * eps1.powi(3) / p0.powi(3)),
        proj_p(p) * (2.0 * eps1 / p0),
    )
}

pub fn comp2_bound(p: &DVector<f64>, v0: f64, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p0 = p0_of(p);
    (
        proj_x(p) * (2.0 * eps.powi(3) / (v0 * v0 * p0.powi(3))),
        proj_p(p) * (2.0 * eps / p0),
    )
}

/// P on the d = 1 grid, stored as (P11, P12, P22) per node.
#[derive(Clone, Debug)]
pub struct WeightMatrixField {
    pub p11: Vec<f64>,
    pub p12: Vec<f64>,
    pub p22: Vec<f64>,
    pub epsilon: f64,
    pub time_scaled: bool,
    pub t: f64,
    pub nx: usize,
    pub np: usize,
}

impl WeightMatrixField {
    pub fn build(eq: &EquilibriumState, eps: f64, time: Option<f64>) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        if let Some(t) = time {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("time must be nonnegative, got {t}")));
            }
        }
        let e = eps * time.unwrap_or(1.0);
        let (nx, np) = (eq.nx(), eq.np());
        let mut p11 = Vec::with_capacity(nx * np);
        let mut p12 = Vec::with_capacity(nx * np);
        let mut p22 = Vec::with_capacity(nx * np);
        for i in 0..nx {
            let v0 = eq.potential.v0(eq.grid.x.nodes[i]);
            let e1 = e / v0;
            for j in 0..np {
                let p0 = crate::equilibrium::p0(eq.grid.p.nodes[j]);
                p11.push(2.0 * e1.powi(3) / p0.powi(5));
                p12.push(e1 * e1 / (p0 * p0));
                p22.push(2.0 * e1 * p0);
            }
        }
        let field = WeightMatrixField {
            p11,
            p12,
            p22,
            epsilon: eps,
            time_scaled: time.is_some(),
            t: time.unwrap_or(0.0),
            nx,
            np,
        };
        field.check_sandwich(eq)?;
        Ok(field)
    }

    /// Smallest eigenvalue margins of P - lower and upper - P over sampled
    /// nodes, relative to the bound.
    pub fn sandwich_margins(&self, eq: &EquilibriumState) -> (f64, f64) {
        let e = self.epsilon * if self.time_scaled { self.t } else { 1.0 };
        let mut lo = f64::INFINITY;
        let mut hi = f64::INFINITY;
        let stride = (self.p11.len() / 4096).max(1);
        for n in (0..self.p11.len()).step_by(stride) {
            let (i, j) = (n / self.np, n % self.np);
            let v0 = eq.potential.v0(eq.grid.x.nodes[i]);
            let p0 = crate::equilibrium::p0(eq.grid.p.nodes[j]);
            let e1 = e / v0;
            let (l1, l2) = (e1.powi(3) / p0.powi(5), e1 * p0);
            let m = |s: f64, a: f64, b: f64, c: f64| -> f64 {
                // smallest eigenvalue of s*[[a, b],[b, c]] normalised by trace
                let (a, b, c) = (s * a, s * b, s * c);
                let tr = a + c;
                if tr == 0.0 {
                    return 0.0;
                }
                let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
                (0.5 * (tr - disc)) / tr.abs()
            };
            lo = lo.min(m(1.0, self.p11[n] - l1, self.p12[n], self.p22[n] - l2));
            hi = hi.min(m(
                1.0,
                3.0 * l1 - self.p11[n],
                -self.p12[n],
                3.0 * l2 - self.p22[n],
            ));
        }
        (lo, hi)
    }

    fn check_sandwich(&self, eq: &EquilibriumState) -> Result<()> {
        let (lo, hi) = self.sandwich_margins(eq);
        if lo < -1e-12 || hi < -1e-12 {
            return Err(Error::Numerical(format!(
                "P sandwich violated: margins {lo:e}, {hi:e}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_p(rng: &mut ChaCha8Rng, d: usize, r: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.gen_range(-r..r))
    }

    fn min_eig(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn p_at_origin_in_one_dimension() {
        let p = DVector::from_element(1, 0.0);
        let m = p_matrix(&p, 1.0);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let ev = m.symmetric_eigen().eigenvalues;
        let (a, b) = (ev.min(), ev.max());
        assert!((a - 1.0).abs() < 1e-15 && (b - 3.0).abs() < 1e-15);
    }

    #[test]
    fn sandwich_holds_and_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1, 2, 3, 5] {
            for _ in 0..2000 {
                let p = rand_p(&mut rng, d, 50.0);
                let eps1 = rng.gen_range(1e-3..3.0);
                let (lo, hi) = sandwich_bounds(&p, eps1);
                let m = p_matrix(&p, eps1);
                let scale = m.amax();
                assert!(min_eig(&(&m - &lo)) >= -1e-12 * scale);
                assert!(min_eig(&(&hi - &m)) >= -1e-12 * scale);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for d in [1, 2, 3] {
            for _ in 0..50 {
                let p = rand_p(&mut rng, d, 3.0);
                let eps1 = rng.gen_range(0.1..2.0);
                for i in 0..d {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp[i] += h;
                    pm[i] -= h;
                    let fd = (p_matrix(&pp, eps1) - p_matrix(&pm, eps1)) / (2.0 * h);
                    assert!((fd - dp_matrix(&p, eps1, i)).amax() < 1e-7);
                    for j in 0..d {
                        let fd = (dp_matrix(
                            &{
                                let mut q = p.clone();
                                q[j] += h;
                                q
                            },
                            eps1,
                            i,
                        ) - dp_matrix(
                            &{
                                let mut q = p.clone();
                                q[j] -= h;
                                q
                            },
                            eps1,
                            i,
                        )) / (2.0 * h);
                        assert!((fd - dpp_matrix(&p, eps1, i, j)).amax() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn x_derivative_matches_finite_differences() {
        // V = x1² + x1 x2 + x2⁴/4 in d = 2
        let point = |x: &[f64]| PotentialPoint {
            grad: DVector::from_vec(vec![2.0 * x[0] + x[1], x[0] + x[1].powi(3)]),
            hess: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0 * x[1] * x[1]]),
        };
        let x = [0.4, -0.7];
        let p = DVector::from_vec(vec![0.3, 1.2]);
        let eps = 0.6;
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fp = p_matrix(&p, eps / point(&xp).v0());
            let fm = p_matrix(&p, eps / point(&xm).v0());
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dx_matrix(&p, &point(&x), eps, i)).amax() < 1e-8);
        }
    }

    #[test]
    fn comp1_two_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in [1, 2, 3, 5] {
            for _ in 0..500 {
                let p = rand_p(&mut rng, d, 20.0);
                let eps1 = rng.gen_range(0.01..2.0);
                let a = comp1_lhs(&p, eps1);
                let b = comp1_lhs_expanded(&p, eps1);
                let scale = a.amax().max(b.amax()).max(1e-300);
                assert!(
                    (&a - &b).amax() <= 1e-11 * scale,
                    "d={d} diff {}",
                    (&a - &b).amax() / scale
                );
            }
        }
    }

    #[test]
    fn comp2_at_flat_potential_vanishes() {
        let p = DVector::from_vec(vec![0.5, -1.0]);
        let m = comp2_lhs(&p, &PotentialPoint::flat(2), 0.7);
        assert!(m.amax() == 0.0);
    }

    #[test]
    fn q_at_origin_with_unit_curvature() {
        let p = DVector::from_element(1, 0.0);
        let v = PotentialPoint {
            grad: DVector::zeros(1),
            hess: DMatrix::from_element(1, 1, 1.0),
        };
        let q = q_matrix(&p, &v);
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        // d = 1 entries: 1/p₀³ and 1 - 1/p₀³
        let p = DVector::from_element(1, 2.0);
        let q = q_matrix(&p, &v);
        let p0 = 5f64.sqrt();
        assert!((q[(0, 1)] - p0.powi(-3)).abs() < 1e-15);
        assert!((q[(1, 1)] - (1.0 - p0.powi(-3))).abs() < 1e-15);
    }

    #[test]
    fn p_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for d in [1, 2, 3, 5] {
            for _ in 0..200 {
                let p = rand_p(&mut rng, d, 100.0);
                let prod = proj_x(&p) * proj_p(&p);
                let scale = 1.0 + p.norm_squared();
                assert!((prod - DMatrix::identity(d, d)).amax() <= 1e-15 * scale);
            }
        }
    }
}
