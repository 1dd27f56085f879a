//! Sampled checks of the matrix lemmas behind the H¹ estimates, the θ
//! constants, and the (ε, γ) searches certifying the time-independent and
//! time-scaled weight matrices.
//!
//! Every certificate here is sample-based on a truncated domain. Matrices are
//! compared in coordinates normalized by exact inverse square roots of
//! I + p⊗p, so margins are O(1) even at |p| = 10³.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::default_x_radius;
use crate::error::{Error, Result};
use crate::operators::{diffusion_inverse, diffusion_matrix};
use crate::pmatrix::{
    block_diag, blocks, comp1_bound, comp1_lhs, comp2_bound, comp2_lhs, d_block, p_matrix, proj_p,
    proj_x, q_matrix, PotentialPoint,
};
use crate::potentials::{Potential1d, PotentialSpec};

pub const SAMPLE_CAVEAT: &str =
    "sample-based certificate on a truncated domain: the bounds are checked at \
finitely many (x, p) samples, while the lemmas assert them uniformly on all of phase space";

/// Residual accepted for exact identities.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Eigen-margin accepted for inequalities.
pub const MARGIN_TOL: f64 = 1e-10;
/// Share of violating fresh samples tolerated before a certificate is
/// downgraded.
pub const REVERIFY_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    YoungMatrix,
    KronSumX,
    KronSumP,
    HessianP0,
    ExactIdentities,
    ThetaBounds,
    CertifyP1,
    CertifyP2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationStatus {
    Certified,
    SampleCertified,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixCheckReport {
    pub lemma_id: LemmaId,
    pub d: usize,
    pub samples: usize,
    pub max_identity_residual: f64,
    pub min_eigen_margin: f64,
    pub failures: usize,
    pub found_constants: BTreeMap<String, f64>,
    pub status: CertificationStatus,
    pub caveat: String,
}

impl MatrixCheckReport {
    fn new(lemma_id: LemmaId, d: usize) -> Self {
        MatrixCheckReport {
            lemma_id,
            d,
            samples: 0,
            max_identity_residual: 0.0,
            min_eigen_margin: f64::INFINITY,
            failures: 0,
            found_constants: BTreeMap::new(),
            status: CertificationStatus::Certified,
            caveat: SAMPLE_CAVEAT.to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.status != CertificationStatus::Failed
    }

    fn absorb(&mut self, residual: f64, margin: f64, failed: bool) {
        self.samples += 1;
        self.max_identity_residual = self.max_identity_residual.max(residual);
        self.min_eigen_margin = self.min_eigen_margin.min(margin);
        if failed {
            self.failures += 1;
        }
    }

    fn finish(mut self) -> Self {
        if self.failures > 0 {
            self.status = CertificationStatus::Failed;
        }
        self
    }
}

fn p0_of(p: &DVector<f64>) -> f64 {
    (1.0 + p.norm_squared()).sqrt()
}

fn kd(i: usize, j: usize) -> f64 {
    (i == j) as u8 as f64
}

/// (I + p⊗p)^α, exact along the eigenvector p/|p|.
pub fn pp_power(p: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
    let d = p.len();
    let n2 = p.norm_squared();
    let mut m = DMatrix::identity(d, d);
    if n2 > 0.0 {
        let f = (alpha * n2.ln_1p()).exp_m1() / n2;
        m += p * p.transpose() * f;
    }
    m
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(sym(m)).eigenvalues;
    (e.min(), e.max())
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    eig_range(m).0
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    eig_range(m).1
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| normal(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------------------
// Young-type matrix inequalities

/// Margins of 2uᵀAv ≤ uᵀAu + vᵀAv and 2u·v ≤ uᵀAu + vᵀA⁻¹v, with the scale
/// of the terms involved.
pub fn young_margins(
    a: &DMatrix<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(f64, f64, f64)> {
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let av = a * v;
    let uau = u.dot(&(a * u));
    let vav = v.dot(&av);
    let uav = u.dot(&av);
    let vaiv = v.dot(&chol.solve(v));
    let uv = u.dot(v);
    let scale = uau + vav + vaiv + 2.0 * uav.abs() + 2.0 * uv.abs();
    Ok((uau + vav - 2.0 * uav, uau + vaiv - 2.0 * uv, scale))
}

/// Random SPD matrices (factor times transpose plus a ridge) against random
/// vectors. The identity residual compares the first margin with the
/// quadratic form of the Kronecker product [[1,-1],[-1,1]] ⊗ A.
pub fn check_young_matrix(d: usize, trials: usize, seed: u64) -> Result<MatrixCheckReport> {
    if d == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(DMatrix<f64>, DVector<f64>, DVector<f64>)> = (0..trials)
        .map(|_| {
            let g = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
            let ridge = 10f64.powf(rng.gen_range(-3.0..0.0));
            let a = &g * g.transpose() + DMatrix::identity(d, d) * ridge;
            let u = DVector::from_fn(d, |_, _| normal(&mut rng));
            let v = DVector::from_fn(d, |_, _| normal(&mut rng));
            (a, u, v)
        })
        .collect();
    let kron = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let results: Vec<Result<(f64, f64)>> = cases
        .par_iter()
        .map(|(a, u, v)| {
            let (m1, m2, scale) = young_margins(a, u, v)?;
            let mut w = DVector::zeros(2 * d);
            w.rows_mut(0, d).copy_from(u);
            w.rows_mut(d, d).copy_from(v);
            let big = kron.kronecker(a);
            let form = w.dot(&(&big * &w));
            Ok(((form - m1).abs() / scale, m1.min(m2) / scale))
        })
        .collect();
    let mut report = MatrixCheckReport::new(LemmaId::YoungMatrix, d);
    for r in results {
        let (res, margin) = r?;
        report.absorb(res, margin, res > IDENTITY_TOL || margin < -IDENTITY_TOL);
    }
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// Kronecker-sum bounds

/// ∂_{p_n} a_lj with a_lj = (δ_lj + p_l p_j)/p₀.
fn da(p: &DVector<f64>, p0: f64, l: usize, j: usize, n: usize) -> f64 {
    (p[l] * kd(n, j) + p[j] * kd(n, l)) / p0 - (kd(l, j) + p[l] * p[j]) * p[n] / p0.powi(3)
}

/// Gradient table g[(l·d + j)·d + n] = ∂_{p_n} a_lj, optionally multiplied by
/// I + p⊗p.
fn grad_table(p: &DVector<f64>, with_pp: bool) -> Vec<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let mut g = vec![0.0; d * d * d];
    for l in 0..d {
        for j in 0..d {
            let base = (l * d + j) * d;
            for n in 0..d {
                g[base + n] = da(p, p0, l, j, n);
            }
            if with_pp {
                let dot: f64 = (0..d).map(|r| p[r] * g[base + r]).sum();
                for n in 0..d {
                    g[base + n] += p[n] * dot;
                }
            }
        }
    }
    g
}

/// Σ_{k,l,i,j} p₀²(δ_kl - p_kp_l/p₀²)(δ_ij - p_ip_j/p₀²) g_lj ⊗ g_ki, summed
/// term by term, together with the entrywise sum of |terms| (the scale that
/// bounds the rounding error of the literal sum).
fn quadruple_sum(p: &DVector<f64>, g: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = p.len();
    let p0 = p0_of(p);
    let px = proj_x(p);
    let q = |a: usize, b: usize| px[(a, b)];
    let mut s = DMatrix::zeros(d, d);
    let mut mag = DMatrix::zeros(d, d);
    for n in 0..d {
        for m in 0..d {
            let (mut acc, mut abs) = (0.0, 0.0);
            for k in 0..d {
                for l in 0..d {
                    let qkl = q(k, l);
                    for i in 0..d {
                        for j in 0..d {
                            let t = p0
                                * p0
                                * qkl
                                * q(i, j)
                                * g[(l * d + j) * d + n]
                                * g[(k * d + i) * d + m];
                            acc += t;
                            abs += t.abs();
                        }
                    }
                }
            }
            s[(n, m)] = acc;
            mag[(n, m)] = abs;
        }
    }
    (s, mag)
}

pub fn kron_sum_x_literal(p: &DVector<f64>) -> DMatrix<f64> {
    quadruple_sum(p, &grad_table(p, false)).0
}

/// 2(I - p⊗p/p₀²) - (2/p₀²)(I - p⊗p/p₀²) + (d-2) p⊗p/p₀⁴.
pub fn kron_sum_x_identity(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len() as f64;
    let p0 = p0_of(p);
    let px = proj_x(p);
    &px * 2.0 - &px * (2.0 / (p0 * p0)) + p * p.transpose() * ((d - 2.0) / p0.powi(4))
}

pub fn kron_sum_p_literal(p: &DVector<f64>) -> DMatrix<f64> {
    quadruple_sum(p, &grad_table(p, true)).0
}

/// d(I + p⊗p) - (d-2)I - 2(I + p⊗p)/p₀².
pub fn kron_sum_p_identity(p: &DVector<f64>) -> DMatrix<f64> {
    let dd = p.len();
    let d = dd as f64;
    let p0 = p0_of(p);
    let pq = proj_p(p);
    &pq * d - DMatrix::identity(dd, dd) * (d - 2.0) - &pq * (2.0 / (p0 * p0))
}

/// Residual of an exact identity and eigen-margin of the accompanying bound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LemmaResiduals {
    pub identity_residual: f64,
    pub eigen_margin: f64,
}

fn residual_vs_terms(lit: &DMatrix<f64>, mag: &DMatrix<f64>, id: &DMatrix<f64>) -> f64 {
    lit.iter()
        .zip(mag.iter())
        .zip(id.iter())
        .fold(0.0f64, |r, ((l, m), i)| r.max((l - i).abs() / m.max(1.0)))
}

/// The literal sum against the identity, relative to the summed |terms|
/// (at |p| = 10³ the terms reach 10¹⁸ and cancel to O(1), so an absolute
/// residual would only measure rounding). The margin is the smallest
/// eigenvalue of d(I - p⊗p/p₀²) minus the identity form.
pub fn check_kron_sum_x(p: &DVector<f64>) -> LemmaResiduals {
    let (lit, mag) = quadruple_sum(p, &grad_table(p, false));
    let id = kron_sum_x_identity(p);
    let bound = proj_x(p) * p.len() as f64;
    LemmaResiduals {
        identity_residual: residual_vs_terms(&lit, &mag, &id),
        eigen_margin: min_eig(&(bound - &id)),
    }
}

/// As [`check_kron_sum_x`]; the margin is taken in coordinates normalized by
/// (I + p⊗p)^{-1/2}, the natural scale of the bound d(I + p⊗p).
pub fn check_kron_sum_p(p: &DVector<f64>) -> LemmaResiduals {
    let (lit, mag) = quadruple_sum(p, &grad_table(p, true));
    let id = kron_sum_p_identity(p);
    let bound = proj_p(p) * p.len() as f64;
    let n = pp_power(p, -0.5);
    LemmaResiduals {
        identity_residual: residual_vs_terms(&lit, &mag, &id),
        eigen_margin: min_eig(&(&n * (bound - &id) * &n)),
    }
}

/// Hessian of p₀ = √(1+|p|²), entry by entry.
pub fn hessian_p0(p: &DVector<f64>) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    DMatrix::from_fn(d, d, |i, j| kd(i, j) / p0 - p[i] * p[j] / p0.powi(3))
}

/// Hessian against (1/p₀)(I - p⊗p/p₀²); margin of the bound ≥ I/p₀³.
pub fn check_hessian_p0(p: &DVector<f64>) -> LemmaResiduals {
    let d = p.len();
    let p0 = p0_of(p);
    let h = hessian_p0(p);
    let closed = proj_x(p) / p0;
    LemmaResiduals {
        identity_residual: max_abs(&(&h - &closed)),
        eigen_margin: min_eig(&(&h - DMatrix::identity(d, d) / p0.powi(3))),
    }
}

/// D·D⁻¹ = I and (I - p⊗p/p₀²)(I + p⊗p) = I, relative to ‖A‖_F‖B‖_F.
pub fn check_exact_identities(p: &DVector<f64>) -> f64 {
    let d = p.len();
    let id = DMatrix::<f64>::identity(d, d);
    let ps: Vec<f64> = p.iter().copied().collect();
    let dm = diffusion_matrix(&ps);
    let di = diffusion_inverse(&ps);
    let r1 = max_abs(&(&dm * &di - &id)) / (dm.norm() * di.norm());
    let (a, b) = (proj_x(p), proj_p(p));
    let r2 = max_abs(&(&a * &b - &id)) / (a.norm() * b.norm());
    r1.max(r2)
}

/// Deterministic momentum samples: p = 0, axis-aligned points with |p| in
/// {1, 10, 10³}, then random directions with |p| log-uniform in [10⁻³, 10³].
pub fn sample_momenta(d: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(d)];
    for k in 0..d {
        for r in [1.0, 10.0, 1e3] {
            let mut p = DVector::zeros(d);
            p[k] = r;
            out.push(p);
        }
    }
    out.truncate(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < n {
        let r = 10f64.powf(rng.gen_range(-3.0..3.0));
        out.push(random_unit(&mut rng, d) * r);
    }
    out
}

/// All pointwise lemmas at `samples` momenta in dimension d, plus the Young
/// inequalities on as many random trials.
pub fn verify_matrices(d: usize, samples: usize, seed: u64) -> Result<Vec<MatrixCheckReport>> {
    if d == 0 || samples == 0 {
        return Err(Error::Config(
            "verify-matrices needs d ≥ 1 and at least one sample".into(),
        ));
    }
    let young = check_young_matrix(d, samples, seed)?;
    let ps = sample_momenta(d, samples, seed.wrapping_add(1));
    let rows: Vec<[LemmaResiduals; 3]> = ps
        .par_iter()
        .map(|p| {
            [
                check_kron_sum_x(p),
                check_kron_sum_p(p),
                check_hessian_p0(p),
            ]
        })
        .collect();
    let idents: Vec<f64> = ps.par_iter().map(check_exact_identities).collect();
    let mut out = vec![young];
    for (k, lemma) in [LemmaId::KronSumX, LemmaId::KronSumP, LemmaId::HessianP0]
        .into_iter()
        .enumerate()
    {
        let mut rep = MatrixCheckReport::new(lemma, d);
        for r in &rows {
            let r = r[k];
            rep.absorb(
                r.identity_residual,
                r.eigen_margin,
                r.identity_residual > IDENTITY_TOL || r.eigen_margin < -MARGIN_TOL,
            );
        }
        out.push(rep.finish());
    }
    let mut rep = MatrixCheckReport::new(LemmaId::ExactIdentities, d);
    for r in idents {
        rep.absorb(r, 0.0, r > IDENTITY_TOL);
    }
    out.push(rep.finish());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Phase-space samples

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseSample {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseSample {
    fn xv(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    fn pv(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSet {
    pub d: usize,
    pub seed: u64,
    pub x_radius: f64,
    pub points: Vec<PhaseSample>,
}

impl SampleSet {
    /// Adversarial points (x ∈ {0, R/2, ±R along e₁} paired with every
    /// adversarial momentum) followed by Gaussian x with standard deviation
    /// R/2, clipped to [-R, R], and log-uniform |p| up to 10³.
    pub fn generate(d: usize, n: usize, x_radius: f64, seed: u64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Config("sample set needs d ≥ 1 and n ≥ 1".into()));
        }
        if !(x_radius > 0.0) {
            return Err(Error::Config(format!(
                "x radius must be positive, got {x_radius}"
            )));
        }
        let adv_p = sample_momenta(d, 1 + 3 * d, 0);
        let mut points = Vec::with_capacity(n);
        for s in [0.0, 0.5, 1.0, -1.0] {
            let mut x = vec![0.0; d];
            x[0] = s * x_radius;
            for p in &adv_p {
                points.push(PhaseSample {
                    x: x.clone(),
                    p: p.iter().copied().collect(),
                });
            }
        }
        points.truncate(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while points.len() < n {
            let x = (0..d)
                .map(|_| (normal(&mut rng) * 0.5 * x_radius).clamp(-x_radius, x_radius))
                .collect();
            let r = 10f64.powf(rng.gen_range(-3.0..3.0));
            let p = random_unit(&mut rng, d) * r;
            points.push(PhaseSample {
                x,
                p: p.iter().copied().collect(),
            });
        }
        Ok(SampleSet {
            d,
            seed,
            x_radius,
            points,
        })
    }

    /// Samples within the equilibrium truncation radius of `v`.
    pub fn for_potential(v: &PotentialSpec, d: usize, n: usize, seed: u64) -> Result<Self> {
        Self::generate(d, n, default_x_radius(v), seed)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// ---------------------------------------------------------------------------
// θ bounds

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub worst_comp1: usize,
    pub worst_comp2: usize,
}

/// (I + p⊗p)-normalizer of a block-diagonal bound diag(α proj_x, β proj_p):
/// N = diag(α^{-1/2}(I+p⊗p)^{1/2}, β^{-1/2}(I+p⊗p)^{-1/2}).
fn block_normalizer(p: &DVector<f64>, alpha: f64, beta: f64) -> DMatrix<f64> {
    block_diag(
        &(pp_power(p, 0.5) / alpha.sqrt()),
        &(pp_power(p, -0.5) / beta.sqrt()),
    )
}

/// Normalizer of the lower sandwich bound of P at scale s.
fn sandwich_normalizer(p: &DVector<f64>, s: f64, v0: f64) -> DMatrix<f64> {
    let p0 = p0_of(p);
    let e1 = s / v0;
    block_normalizer(p, e1.powi(3) / p0.powi(3), e1 / p0)
}

/// Largest generalized eigenvalues of the two θ sums against their unit-θ
/// bounds at one sample.
pub fn theta_ratios(v: &dyn Potential1d, eps: f64, s: &PhaseSample) -> (f64, f64) {
    let p = s.pv();
    let pt = PotentialPoint::separable(v, &s.xv());
    let v0 = pt.v0();
    let p0 = p0_of(&p);
    let e1 = eps / v0;
    let n1 = block_normalizer(&p, 2.0 * e1.powi(3) / p0.powi(3), 2.0 * e1 / p0);
    let t1 = max_eig(&(&n1 * comp1_lhs(&p, e1) * &n1));
    let n2 = block_normalizer(
        &p,
        2.0 * eps.powi(3) / (v0 * v0 * p0.powi(3)),
        2.0 * eps / p0,
    );
    let t2 = max_eig(&(&n2 * comp2_lhs(&p, &pt, eps) * &n2));
    (t1, t2)
}

/// Smallest common θ₁ = θ₂ and θ₃ = θ₄ for which both lemma bounds hold at
/// every sample. For a common θ the feasibility question has a closed answer,
/// the largest generalized eigenvalue, so no bisection is needed and the
/// result is a maximum over samples (monotone in the sample set).
pub fn find_theta_bounds(
    v: &dyn Potential1d,
    eps: f64,
    samples: &SampleSet,
) -> Result<ThetaBounds> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("empty sample set".into()));
    }
    let ratios: Vec<(f64, f64)> = samples
        .points
        .par_iter()
        .map(|s| theta_ratios(v, eps, s))
        .collect();
    for (k, r) in ratios.iter().enumerate() {
        if !r.0.is_finite() || !r.1.is_finite() {
            let s = &samples.points[k];
            return Err(Error::Certification(format!(
                "theta bound not attainable at sample {k}: x = {:?}, p = {:?}, ratios = {:?}",
                s.x, s.p, r
            )));
        }
    }
    let arg = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let mut best = 0;
        for (k, r) in ratios.iter().enumerate() {
            if f(r) > f(&ratios[best]) {
                best = k;
            }
        }
        best
    };
    let w1 = arg(&|r| r.0);
    let w2 = arg(&|r| r.1);
    let t12 = ratios[w1].0.max(0.0);
    let t34 = ratios[w2].1.max(0.0);
    Ok(ThetaBounds {
        theta1: t12,
        theta2: t12,
        theta3: t34,
        theta4: t34,
        epsilon: eps,
        samples: samples.len(),
        worst_comp1: w1,
        worst_comp2: w2,
    })
}

// ---------------------------------------------------------------------------
// Lower blocks and certification

/// Parameters of the weight matrix: s = ε for the time-independent case and
/// s = εt for the time-scaled one.
#[derive(Clone, Copy, Debug)]
pub struct WeightParams {
    pub eps: f64,
    pub s: f64,
    pub gamma: f64,
    pub eta: f64,
    pub time_scaled: bool,
}

/// The closed-form blocks X, Y, Z of the lower bound.
pub fn lower_blocks(
    pt: &PotentialPoint,
    p: &DVector<f64>,
    th: &ThetaBounds,
    w: &WeightParams,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = p.len();
    let df = d as f64;
    let v0 = pt.v0();
    let p0 = p0_of(p);
    let s = w.s;
    let id = DMatrix::<f64>::identity(d, d);
    let px = proj_x(p);
    let pq = proj_p(p);
    let shift = if w.time_scaled { 3.0 * w.eps / v0 } else { 0.0 };
    let fx = 1.0 - shift - th.theta3 * s - th.theta1 * s / v0 - s * df / (2.0 * w.eta * v0);
    let x = &px * (fx * 2.0 * s * s / (v0 * v0 * p0.powi(3)));
    let ymid = if w.time_scaled {
        (s - 2.0 * w.eps) / v0 + 2.0
    } else {
        s / v0 + 2.0
    };
    let y = -(&pt.hess * (2.0 * s / v0) + &id * df) * &px * (s * s / (v0 * v0 * p0.powi(3)))
        + &id * (ymid * s / (v0 * p0 * p0));
    let zlin = if w.time_scaled {
        ((4.0 - 2.0 * th.theta2) * s - 2.0 * w.eps) / v0
    } else {
        (4.0 - 2.0 * th.theta2) * s / v0
    };
    let zc = zlin + 2.0 * w.gamma - 2.0 * th.theta4 * s - 2.0 * s * df / (w.eta * v0);
    let z = &pt.hess * (-2.0 * s * s / (v0 * v0 * p0 * p0)) + &pq * (zc / p0)
        - &id * (4.0 * s * df / (v0 * p0 * p0));
    (x, y, z)
}

/// ∂_t P for P(εt): ε times the s-derivative of P(s).
fn dt_p(p: &DVector<f64>, v0: f64, eps: f64, s: f64) -> DMatrix<f64> {
    let d = p.len();
    let p0 = p0_of(p);
    let a = proj_x(p) * (6.0 * eps * s * s / (v0.powi(3) * p0.powi(3)));
    let b = DMatrix::identity(d, d) * (2.0 * eps * s / (v0 * v0 * p0 * p0));
    let e = proj_p(p) * (2.0 * eps / (v0 * p0));
    blocks(&a, &b, &b, &e)
}

fn eta_block(p: &DVector<f64>, v0: f64, w: &WeightParams) -> DMatrix<f64> {
    let df = p.len() as f64;
    let p0 = p0_of(p);
    let s = w.s;
    block_diag(
        &(proj_x(p) * (s.powi(3) * df / (w.eta * v0.powi(3) * p0.powi(3)))),
        &(proj_p(p) * (2.0 * s * df / (w.eta * v0 * p0))),
    )
}

/// 2γ diag(0, D) + QP + PQᵀ [- ∂_tP] - η-block: the part shared by the exact
/// dissipation matrix and its lower bound.
fn common_part(pt: &PotentialPoint, p: &DVector<f64>, w: &WeightParams) -> DMatrix<f64> {
    let v0 = pt.v0();
    let pm = p_matrix(p, w.s / v0);
    let q = q_matrix(p, pt);
    let mut m = d_block(p) * (2.0 * w.gamma) + &q * &pm + &pm * q.transpose();
    if w.time_scaled {
        m -= dt_p(p, v0, w.eps, w.s);
    }
    m - eta_block(p, v0, w)
}

/// The lower block assembled from Q, P and the θ-scaled bounds.
pub fn lower_block_assembled(
    pt: &PotentialPoint,
    p: &DVector<f64>,
    th: &ThetaBounds,
    w: &WeightParams,
) -> DMatrix<f64> {
    let v0 = pt.v0();
    let (a1, e1) = comp1_bound(p, w.s / v0);
    let (a2, e2) = comp2_bound(p, v0, w.s);
    common_part(pt, p, w)
        - block_diag(&(a1 * th.theta1), &(e1 * th.theta2))
        - block_diag(&(a2 * th.theta3), &(e2 * th.theta4))
}

/// The exact matrix bounding -dE/dt from below (P₁, or P₂ when time-scaled).
pub fn dissipation_matrix(pt: &PotentialPoint, p: &DVector<f64>, w: &WeightParams) -> DMatrix<f64> {
    let v0 = pt.v0();
    common_part(pt, p, w) - comp2_lhs(p, pt, w.s) - comp1_lhs(p, w.s / v0)
}

/// Normalized margins of the X, Y, Z conditions and of the block matrix.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BlockMargins {
    pub x: f64,
    pub y_lower: f64,
    pub y_upper: f64,
    pub z: f64,
    /// Smallest generalized eigenvalue of the lower block against P.
    pub c: f64,
    /// Smallest normalized eigenvalue of the lower block.
    pub block: f64,
    /// Closed-form X, Y, Z against the assembled lower block.
    pub residual: f64,
}

impl BlockMargins {
    fn xyz(&self) -> f64 {
        self.x.min(self.y_lower).min(self.y_upper).min(self.z)
    }
}

fn s_floor(w: &WeightParams) -> f64 {
    w.s.max(1e-9 * w.eps)
}

pub fn block_margins(
    v: &dyn Potential1d,
    s: &PhaseSample,
    th: &ThetaBounds,
    w: &WeightParams,
) -> BlockMargins {
    let p = s.pv();
    let pt = PotentialPoint::separable(v, &s.xv());
    let v0 = pt.v0();
    let p0 = p0_of(&p);
    let d = p.len();
    let sn = s_floor(w);
    let (x, y, z) = lower_blocks(&pt, &p, th, w);

    let nx = pp_power(&p, 0.5) * (v0 * p0.powf(1.5) / sn);
    let xb = proj_x(&p) * (w.s * w.s / (v0 * v0 * p0.powi(3)));
    let mx = min_eig(&(&nx * (&x - xb) * &nx));

    let (ylo, yhi) = eig_range(&(sym(&y) * (v0 * p0 * p0 / sn)));
    let yscale = w.s / sn;

    let nz = pp_power(&p, -0.5) * p0.sqrt();
    let mz = min_eig(&(&nz * &z * &nz)) - (2.0 * w.gamma - 1.0);
    let mz = mz.min(2.0 * w.gamma - 1.0);

    let big = blocks(&x, &y.transpose(), &y, &z);
    let n = sandwich_normalizer(&p, sn, v0);
    let bn = &n * &big * &n;
    let block = min_eig(&bn);
    let c = if w.s > 0.0 {
        let pn = &n * p_matrix(&p, w.s / v0) * &n;
        match Cholesky::new(sym(&pn)) {
            Some(ch) => {
                let li = ch
                    .l()
                    .try_inverse()
                    .unwrap_or_else(|| DMatrix::zeros(2 * d, 2 * d));
                min_eig(&(&li * &bn * li.transpose()))
            }
            None => f64::NAN,
        }
    } else {
        0.0
    };
    let asm = &n * lower_block_assembled(&pt, &p, th, w) * &n;
    let residual = max_abs(&(&asm - &bn)) / max_abs(&bn).max(1.0);
    BlockMargins {
        x: mx,
        y_lower: ylo - yscale,
        y_upper: 3.0 * yscale - yhi,
        z: mz,
        c,
        block,
        residual,
    }
}

/// Normalized smallest eigenvalue of the exact dissipation matrix minus c·P.
pub fn dissipation_margin(v: &dyn Potential1d, s: &PhaseSample, w: &WeightParams, c: f64) -> f64 {
    let p = s.pv();
    let pt = PotentialPoint::separable(v, &s.xv());
    let v0 = pt.v0();
    let n = sandwich_normalizer(&p, s_floor(w), v0);
    let m = dissipation_matrix(&pt, &p, w) - p_matrix(&p, w.s / v0) * c;
    min_eig(&(&n * m * &n))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub eps_start: f64,
    pub eps_min: f64,
    pub gamma_start: f64,
    pub gamma_max: f64,
    pub rel_tol: f64,
    /// Number of equispaced times in [0, t₀] for the time-scaled search.
    pub t_samples: usize,
    /// DMS decay rate λ and δ, if known, for the Grönwall rate bound Λ.
    pub dms_rate: Option<f64>,
    pub delta: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            eps_start: 1.0,
            eps_min: 1e-8,
            gamma_start: 1.0,
            gamma_max: 1e12,
            rel_tol: 1e-3,
            t_samples: 9,
            dms_rate: None,
            delta: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P1Certificate {
    pub epsilon: f64,
    pub gamma: f64,
    pub c: f64,
    pub eta: f64,
    pub thetas: ThetaBounds,
    pub lambda_bound: Option<f64>,
    pub report: MatrixCheckReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P2Certificate {
    pub epsilon: f64,
    pub gamma: f64,
    pub eta: f64,
    pub t0: f64,
    pub c3: f64,
    pub c4: f64,
    pub thetas: ThetaBounds,
    pub report: MatrixCheckReport,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 2.0 / 3.0) {
        return Err(Error::Config(format!(
            "eta must lie in (0, 2/3], got {eta}"
        )));
    }
    Ok(())
}

/// Evaluation grid: every sample at every time (a single time for P₁).
struct Search<'a> {
    v: &'a dyn Potential1d,
    samples: &'a SampleSet,
    th: &'a ThetaBounds,
    eta: f64,
    times: Vec<f64>,
    time_scaled: bool,
}

impl Search<'_> {
    fn params(&self, eps: f64, gamma: f64, t: f64) -> WeightParams {
        let s = if self.time_scaled { eps * t } else { eps };
        WeightParams {
            eps,
            s,
            gamma,
            eta: self.eta,
            time_scaled: self.time_scaled,
        }
    }

    fn margins(&self, eps: f64, gamma: f64) -> Vec<(usize, f64, BlockMargins)> {
        let jobs: Vec<(usize, f64)> = (0..self.samples.len())
            .flat_map(|k| self.times.iter().map(move |&t| (k, t)))
            .collect();
        jobs.par_iter()
            .map(|&(k, t)| {
                (
                    k,
                    t,
                    block_margins(
                        self.v,
                        &self.samples.points[k],
                        self.th,
                        &self.params(eps, gamma, t),
                    ),
                )
            })
            .collect()
    }

    fn xyz_ok(&self, eps: f64) -> (bool, usize) {
        let ms = self.margins(eps, 1.0);
        let worst = ms
            .iter()
            .min_by(|a, b| a.2.xyz().total_cmp(&b.2.xyz()))
            .unwrap();
        (worst.2.xyz() >= -IDENTITY_TOL, worst.0)
    }

    /// Block condition: C > 0 for P₁, block ≥ 0 for P₂.
    fn block_ok(&self, eps: f64, gamma: f64) -> bool {
        self.margins(eps, gamma).iter().all(|m| {
            if self.time_scaled {
                m.2.block >= -IDENTITY_TOL
            } else {
                m.2.c > IDENTITY_TOL
            }
        })
    }

    /// Halve ε until X, Y, Z hold, refine by bisection, then double γ until
    /// the block condition holds and refine by bisection.
    fn run(&self, opts: &CertifyOptions) -> Result<(f64, f64)> {
        let mut eps = opts.eps_start;
        let mut worst = 0;
        while eps >= opts.eps_min {
            let (ok, w) = self.xyz_ok(eps);
            worst = w;
            if !ok {
                eps *= 0.5;
                continue;
            }
            if eps < opts.eps_start {
                let (mut lo, mut hi) = (eps, (2.0 * eps).min(opts.eps_start));
                while (hi - lo) > opts.rel_tol * lo {
                    let mid = 0.5 * (lo + hi);
                    if self.xyz_ok(mid).0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                eps = lo;
            }
            let mut gamma = opts.gamma_start;
            while gamma <= opts.gamma_max && !self.block_ok(eps, gamma) {
                gamma *= 2.0;
            }
            if gamma > opts.gamma_max {
                eps *= 0.5;
                continue;
            }
            if gamma > opts.gamma_start {
                let (mut lo, mut hi) = ((0.5 * gamma).max(opts.gamma_start), gamma);
                while (hi - lo) > opts.rel_tol * hi {
                    let mid = 0.5 * (lo + hi);
                    if self.block_ok(eps, mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                gamma = hi;
            }
            return Ok((eps, gamma));
        }
        let s = &self.samples.points[worst];
        Err(Error::Certification(format!(
            "search exhausted epsilon down to {:e} without certification; worst sample x = {:?}, p = {:?}; \
             denser sampling near this point may help",
            opts.eps_min, s.x, s.p
        )))
    }

    fn summarize(&self, report: &mut MatrixCheckReport, eps: f64, gamma: f64) -> f64 {
        let ms = self.margins(eps, gamma);
        let mut cmin = f64::INFINITY;
        for (_, _, m) in &ms {
            let margin = if self.time_scaled {
                m.xyz().min(m.block)
            } else {
                m.xyz().min(m.c)
            };
            report.samples += 1;
            report.max_identity_residual = report.max_identity_residual.max(m.residual);
            report.min_eigen_margin = report.min_eigen_margin.min(margin);
            cmin = cmin.min(m.c);
        }
        cmin
    }

    /// Share of fresh (sample, time) pairs where a condition or the exact
    /// dissipation bound fails.
    fn reverify(&self, eps: f64, gamma: f64, c: f64) -> (usize, usize) {
        let ms = self.margins(eps, gamma);
        let bad = ms
            .par_iter()
            .filter(|(k, t, m)| {
                let w = self.params(eps, gamma, *t);
                let exact = dissipation_margin(self.v, &self.samples.points[*k], &w, c);
                m.xyz() < -MARGIN_TOL || exact < -MARGIN_TOL
            })
            .count();
        (bad, ms.len())
    }
}

impl<'a> Search<'a> {
    fn with_samples(&self, samples: &'a SampleSet) -> Search<'a> {
        Search {
            v: self.v,
            samples,
            th: self.th,
            eta: self.eta,
            times: self.times.clone(),
            time_scaled: self.time_scaled,
        }
    }
}

fn finish_reverify(report: &mut MatrixCheckReport, bad: usize, total: usize) {
    let frac = bad as f64 / total.max(1) as f64;
    report
        .found_constants
        .insert("reverify_violation_fraction".into(), frac);
    report.failures = bad;
    report.status = if frac <= REVERIFY_TOL {
        CertificationStatus::Certified
    } else {
        CertificationStatus::SampleCertified
    };
}

fn theta_constants(report: &mut MatrixCheckReport, th: &ThetaBounds) {
    for (k, v) in [
        ("theta1", th.theta1),
        ("theta2", th.theta2),
        ("theta3", th.theta3),
        ("theta4", th.theta4),
    ] {
        report.found_constants.insert(k.into(), v);
    }
}

/// Certifies the time-independent weight matrix: X, Y, Z conditions, the
/// block bound ≥ C·P, and re-verification on `fresh`.
pub fn certify_p1(
    v: &dyn Potential1d,
    thetas: &ThetaBounds,
    eta: f64,
    samples: &SampleSet,
    fresh: &SampleSet,
    opts: &CertifyOptions,
) -> Result<P1Certificate> {
    check_eta(eta)?;
    let search = Search {
        v,
        samples,
        th: thetas,
        eta,
        times: vec![1.0],
        time_scaled: false,
    };
    let (eps, gamma) = search.run(opts)?;
    let mut report = MatrixCheckReport::new(LemmaId::CertifyP1, samples.d);
    let c = search.summarize(&mut report, eps, gamma);
    let (bad, total) = search.with_samples(fresh).reverify(eps, gamma, c);
    finish_reverify(&mut report, bad, total);
    theta_constants(&mut report, thetas);
    report.found_constants.insert("epsilon".into(), eps);
    report.found_constants.insert("gamma".into(), gamma);
    report.found_constants.insert("eta".into(), eta);
    report.found_constants.insert("C".into(), c);
    let lambda_bound = match (opts.dms_rate, opts.delta) {
        (Some(l), Some(dl)) => {
            let k1 = l * (2.0 - dl) / 2.0 / (gamma + (2.0 + dl) / 4.0);
            let lb = 0.5 * k1.min(c);
            report.found_constants.insert("Lambda_bound".into(), lb);
            Some(lb)
        }
        _ => None,
    };
    Ok(P1Certificate {
        epsilon: eps,
        gamma,
        c,
        eta,
        thetas: thetas.clone(),
        lambda_bound,
        report,
    })
}

/// Certifies the time-scaled weight matrix on t ∈ [0, t₀] and returns the
/// regularization constants C₃ = γ/ε³, C₄ = γ/ε.
pub fn certify_p2(
    v: &dyn Potential1d,
    thetas: &ThetaBounds,
    eta: f64,
    t0: f64,
    samples: &SampleSet,
    fresh: &SampleSet,
    opts: &CertifyOptions,
) -> Result<P2Certificate> {
    check_eta(eta)?;
    if !(t0 > 0.0) {
        return Err(Error::Config(format!("t0 must be positive, got {t0}")));
    }
    let nt = opts.t_samples.max(2);
    let times: Vec<f64> = (0..nt).map(|k| t0 * k as f64 / (nt - 1) as f64).collect();
    let search = Search {
        v,
        samples,
        th: thetas,
        eta,
        times,
        time_scaled: true,
    };
    let (eps, gamma) = search.run(opts)?;
    let mut report = MatrixCheckReport::new(LemmaId::CertifyP2, samples.d);
    search.summarize(&mut report, eps, gamma);
    let (bad, total) = search.with_samples(fresh).reverify(eps, gamma, 0.0);
    finish_reverify(&mut report, bad, total);
    theta_constants(&mut report, thetas);
    let (c3, c4) = (gamma / eps.powi(3), gamma / eps);
    for (k, val) in [
        ("epsilon", eps),
        ("gamma", gamma),
        ("eta", eta),
        ("t0", t0),
        ("C3", c3),
        ("C4", c4),
    ] {
        report.found_constants.insert(k.into(), val);
    }
    Ok(P2Certificate {
        epsilon: eps,
        gamma,
        eta,
        t0,
        c3,
        c4,
        thetas: thetas.clone(),
        report,
    })
}
