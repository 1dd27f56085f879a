//! Small dense and banded kernels shared by the operators, the eigen-solvers
//! and the elliptic solver.

use crate::error::{Error, Result};

/// Pairwise summation. The split points depend only on the length, so the
/// result is reproducible whatever produced the slice.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn dot_weighted(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let prod: Vec<f64> = w
        .iter()
        .zip(a)
        .zip(b)
        .map(|((w, a), b)| w * a * b)
        .collect();
    pairwise_sum(&prod)
}

/// Tridiagonal matrix stored by diagonals; `lower[0]` and `upper[n-1]` unused.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    /// `alpha * I + beta * self`
    pub fn shifted(&self, alpha: f64, beta: f64) -> Tridiagonal {
        Tridiagonal {
            lower: self.lower.iter().map(|v| beta * v).collect(),
            diag: self.diag.iter().map(|v| alpha + beta * v).collect(),
            upper: self.upper.iter().map(|v| beta * v).collect(),
        }
    }

    pub fn factor(&self) -> Result<TriFactor> {
        TriFactor::new(self)
    }
}

/// Thomas factorisation kept for repeated solves with one matrix.
#[derive(Clone, Debug)]
pub struct TriFactor {
    lower: Vec<f64>,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl TriFactor {
    pub fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.len();
        let mut cprime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let scale = m
            .diag
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            let denom = if i == 0 {
                m.diag[0]
            } else {
                m.diag[i] - m.lower[i] * cprime[i - 1]
            };
            if !denom.is_finite() || denom.abs() <= 1e-14 * scale {
                return Err(Error::Numerical(format!(
                    "tridiagonal pivot {denom:e} at row {i} (scale {scale:e})"
                )));
            }
            inv_denom[i] = 1.0 / denom;
            if i + 1 < n {
                cprime[i] = m.upper[i] * inv_denom[i];
            }
        }
        Ok(TriFactor {
            lower: m.lower.clone(),
            cprime,
            inv_denom,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_denom[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.cprime[i] * x[i + 1];
        }
    }
}

/// Number of eigenvalues of the symmetric tridiagonal (d, e) below `x`.
/// `e[i]` couples rows i and i+1.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let qq = if q.abs() < 1e-300 {
            1e-300f64.copysign(q)
        } else {
            q
        };
        q = d[i] - x - e[i - 1] * e[i - 1] / qq;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// k-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix by
/// Sturm bisection.
pub fn sym_tridiag_eigenvalue(d: &[f64], e: &[f64], k: usize) -> Result<f64> {
    let n = d.len();
    if k >= n || e.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "eigenvalue {k} of {n}x{n} tridiagonal"
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let span = (hi - lo).max(1e-300);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * span.max(mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvector of a symmetric tridiagonal for a known eigenvalue, by inverse
/// iteration with a slightly perturbed shift. Returns a unit vector and the
/// residual norm of (A - lambda) v.
pub fn sym_tridiag_eigenvector(d: &[f64], e: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = d.len();
    let scale = d
        .iter()
        .chain(e.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    let shift = lambda + 1e-10 * scale;
    let mut m = Tridiagonal::zeros(n);
    for i in 0..n {
        m.diag[i] = d[i] - shift;
        if i + 1 < n {
            m.upper[i] = e[i];
            m.lower[i + 1] = e[i];
        }
    }
    let fac = m.factor()?;
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64 / 101.0)
        .collect();
    for _ in 0..6 {
        fac.solve_in_place(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let mut res = 0.0;
    for i in 0..n {
        let mut s = (d[i] - lambda) * v[i];
        if i > 0 {
            s += e[i - 1] * v[i - 1];
        }
        if i + 1 < n {
            s += e[i] * v[i + 1];
        }
        res += s * s;
    }
    Ok((v, res.sqrt()))
}

/// Generalized problem K v = lambda S v with K symmetric tridiagonal and S a
/// positive diagonal, reduced to S^{-1/2} K S^{-1/2}.
#[derive(Clone, Debug)]
pub struct WeightedTridiagEigen {
    d: Vec<f64>,
    e: Vec<f64>,
    sqrt_s: Vec<f64>,
}

impl WeightedTridiagEigen {
    /// `k` gives (diag, off) of K; `s` is the diagonal mass.
    pub fn new(kdiag: &[f64], koff: &[f64], s: &[f64]) -> Result<Self> {
        let n = kdiag.len();
        if s.len() != n || koff.len() + 1 != n {
            return Err(Error::Dimension("weighted eigenproblem sizes".into()));
        }
        if s.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Numerical("mass matrix not positive".into()));
        }
        let sqrt_s: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
        let d = (0..n).map(|i| kdiag[i] / s[i]).collect();
        let e = (0..n - 1)
            .map(|i| koff[i] / (sqrt_s[i] * sqrt_s[i + 1]))
            .collect();
        Ok(WeightedTridiagEigen { d, e, sqrt_s })
    }

    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        sym_tridiag_eigenvalue(&self.d, &self.e, k)
    }

    /// Eigenvector in the original variables, normalised in the S-norm.
    pub fn eigenvector(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        let lambda = self.eigenvalue(k)?;
        let (y, res) = sym_tridiag_eigenvector(&self.d, &self.e, lambda)?;
        let scale = self.d.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if res > 1e-6 * scale {
            return Err(Error::Numerical(format!("eigenvector residual {res:e}")));
        }
        Ok((
            lambda,
            y.iter().zip(&self.sqrt_s).map(|(y, s)| y / s).collect(),
        ))
    }
}

/// Dominant eigenvalue of a symmetric positive semi-definite operator by power
/// iteration with a Rayleigh-quotient stopping rule.
pub fn power_iteration<F>(n: usize, mut apply: F, tol: f64, max_iter: usize) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 2654435761) % 1000) as f64 / 1000.0)
        .collect();
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        apply(&v, &mut w);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        std::mem::swap(&mut v, &mut w);
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Logarithmic mean of exp(la) and exp(lb), evaluated from the logs.
pub fn log_mean_from_logs(la: f64, lb: f64) -> f64 {
    let (hi, lo) = if la >= lb { (la, lb) } else { (lb, la) };
    let delta = hi - lo;
    if delta < 1e-8 {
        lo.exp() * (1.0 + 0.5 * delta + delta * delta / 6.0)
    } else {
        lo.exp() * delta.exp_m1() / delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }

    #[test]
    fn thomas_solves_poisson() {
        let n = 50;
        let mut m = Tridiagonal::zeros(n);
        for i in 0..n {
            m.diag[i] = 2.0;
            m.lower[i] = -1.0;
            m.upper[i] = -1.0;
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        m.apply(&x, &mut b);
        m.factor().unwrap().solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut m = Tridiagonal::zeros(3);
        m.diag = vec![0.0, 1.0, 1.0];
        assert!(m.factor().is_err());
    }

    #[test]
    fn sturm_bisection_on_laplacian() {
        // eigenvalues 2 - 2cos(k pi/(n+1))
        let n = 40;
        let d = vec![2.0; n];
        let e = vec![-1.0; n - 1];
        for k in [0, 1, 5, 39] {
            let exact =
                2.0 - 2.0 * (((k + 1) as f64) * std::f64::consts::PI / (n as f64 + 1.0)).cos();
            let got = sym_tridiag_eigenvalue(&d, &e, k).unwrap();
            assert!((got - exact).abs() < 1e-13, "k={k} {got} {exact}");
        }
        let (v, res) =
            sym_tridiag_eigenvector(&d, &e, sym_tridiag_eigenvalue(&d, &e, 1).unwrap()).unwrap();
        assert!(res < 1e-10);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let diag = [1.0, 3.0, 2.0, 0.5];
        let top = power_iteration(
            4,
            |v, w| {
                for i in 0..4 {
                    w[i] = diag[i] * v[i];
                }
            },
            1e-14,
            10_000,
        );
        assert!((top - 3.0).abs() < 1e-8);
    }

    #[test]
    fn log_mean_limits() {
        assert!((log_mean_from_logs(0.0, 0.0) - 1.0).abs() < 1e-15);
        let (a, b) = (2.0f64, 5.0f64);
        let exact = (b - a) / (b.ln() - a.ln());
        assert!((log_mean_from_logs(a.ln(), b.ln()) - exact).abs() < 1e-14);
        let (a, b) = ((-300.0f64).exp(), (-300.5f64).exp());
        let exact = (a - b) / (a.ln() - b.ln());
        assert!((log_mean_from_logs(-300.0, -300.5) - exact).abs() < 1e-12 * exact);
    }
}
