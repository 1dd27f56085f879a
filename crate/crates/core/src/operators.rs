//! Discrete collision operator L, transport operator T, projection Π and the
//! full right-hand side, all in the relative variable h = f/f∞ - 1.
//!
//! Both operators are written as face fluxes divided by the cell weight
//! W = wx·wp·f∞, which makes mass bookkeeping and the f∞-weighted adjoints
//! exact. The transport flux field is built from log-mean face values of ρ∞
//! and M and is divergence free at every node, so T1 = 0 to round-off.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{diffusion_coeff, EquilibriumState};
use crate::error::{Error, Result};
use crate::grid::{AxisGrid, FieldKind, PhaseField};
use crate::linalg::{pairwise_sum, Tridiagonal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    ChangCooper,
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    Central,
    Upwind,
}

/// D(p) = (I + p⊗p)/p₀.
pub fn diffusion_matrix(p: &[f64]) -> DMatrix<f64> {
    let d = p.len();
    let p0 = (1.0 + p.iter().map(|v| v * v).sum::<f64>()).sqrt();
    DMatrix::from_fn(d, d, |a, b| ((a == b) as u8 as f64 + p[a] * p[b]) / p0)
}

/// D(p)⁻¹ = p₀(I - p⊗p/p₀²).
pub fn diffusion_inverse(p: &[f64]) -> DMatrix<f64> {
    crate::pmatrix::proj_x(&nalgebra::DVector::from_column_slice(p))
        * (1.0 + p.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Momentum-space collision operator acting row by row: L h = B h + b with
/// B tridiagonal. For the Chang-Cooper flux b = 0 and B annihilates
/// constants, which makes f∞ an exact fixed point.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    pub scheme: FluxScheme,
    pub b: Tridiagonal,
    pub affine: Vec<f64>,
    /// Face conductances k_{j+1/2} (Chang-Cooper only; zero at the ends).
    pub conductance: Vec<f64>,
    /// wp·M per node.
    pub mass: Vec<f64>,
}

impl CollisionOperator {
    pub fn new(axis: &AxisGrid, m: &[f64], m_face: &[f64], c: f64, scheme: FluxScheme) -> Self {
        let n = axis.len();
        let dp = axis.spacing;
        let mass: Vec<f64> = axis.weights.iter().zip(m).map(|(w, m)| w * m).collect();
        let mut b = Tridiagonal::zeros(n);
        let mut affine = vec![0.0; n];
        let mut conductance = vec![0.0; n + 1];
        match scheme {
            FluxScheme::ChangCooper => {
                for k in 1..n {
                    let pf = 0.5 * (axis.nodes[k - 1] + axis.nodes[k]);
                    conductance[k] = diffusion_coeff(pf, c) * m_face[k] / dp;
                }
                for j in 0..n {
                    b.lower[j] = conductance[j] / mass[j];
                    b.upper[j] = conductance[j + 1] / mass[j];
                    b.diag[j] = -(b.lower[j] + b.upper[j]);
                }
            }
            FluxScheme::Centered => {
                // f-form matrix A, then B_jk = A_jk M_k / M_j
                let mut a = Tridiagonal::zeros(n);
                for k in 1..n {
                    let pf = 0.5 * (axis.nodes[k - 1] + axis.nodes[k]);
                    let dd = diffusion_coeff(pf, c) / dp;
                    let lo = -dd + 0.5 * pf;
                    let hi = dd + 0.5 * pf;
                    let (l, r) = (k - 1, k);
                    a.diag[l] += lo / axis.weights[l];
                    a.upper[l] += hi / axis.weights[l];
                    a.lower[r] -= lo / axis.weights[r];
                    a.diag[r] -= hi / axis.weights[r];
                }
                for j in 0..n {
                    b.diag[j] = a.diag[j];
                    if j > 0 {
                        b.lower[j] = a.lower[j] * m[j - 1] / m[j];
                    }
                    if j + 1 < n {
                        b.upper[j] = a.upper[j] * m[j + 1] / m[j];
                    }
                    affine[j] = b.diag[j]
                        + if j > 0 { b.lower[j] } else { 0.0 }
                        + if j + 1 < n { b.upper[j] } else { 0.0 };
                }
            }
        }
        CollisionOperator {
            scheme,
            b,
            affine,
            conductance,
            mass,
        }
    }

    pub fn for_equilibrium(eq: &EquilibriumState, scheme: FluxScheme) -> Self {
        Self::new(
            &eq.grid.p,
            &eq.maxwellian,
            &eq.m_face,
            eq.light_speed,
            scheme,
        )
    }

    pub fn np(&self) -> usize {
        self.b.len()
    }

    pub fn apply_row(&self, h: &[f64], out: &mut [f64]) {
        self.b.apply(h, out);
        if self.scheme != FluxScheme::ChangCooper {
            for (o, a) in out.iter_mut().zip(&self.affine) {
                *o += a;
            }
        }
    }

    pub fn apply(&self, h: &[f64], out: &mut [f64]) {
        let np = self.np();
        out.par_chunks_mut(np)
            .zip(h.par_chunks(np))
            .for_each(|(o, h)| self.apply_row(h, o));
    }

    /// Σ_faces k (Δh)² for one row (Chang-Cooper), the discrete D-weighted
    /// Dirichlet form against wp·M.
    pub fn dirichlet_row(&self, h: &[f64]) -> f64 {
        let v: Vec<f64> = (1..h.len())
            .map(|k| {
                let d = h[k] - h[k - 1];
                self.conductance[k] * d * d
            })
            .collect();
        pairwise_sum(&v)
    }

    /// Stiffness (diag, off) of the Dirichlet form and the mass diagonal, for
    /// the κ₁ eigenproblem.
    pub fn stiffness(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.np();
        let diag = (0..n)
            .map(|j| self.conductance[j] + self.conductance[j + 1])
            .collect();
        let off = (1..n).map(|k| -self.conductance[k]).collect();
        (diag, off, self.mass.clone())
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Csr {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col.len());
        }
        Csr {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(256).enumerate().for_each(|(blk, o)| {
            let start = blk * 256;
            for (k, y) in o.iter_mut().enumerate() {
                let r = start + k;
                let mut s = 0.0;
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.val[e] * x[self.col[e]];
                }
                *y = s;
            }
        });
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        for e in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col[e] == c {
                return self.val[e];
            }
        }
        0.0
    }

    /// W⁻¹ Aᵀ W, the adjoint in the W-weighted inner product.
    fn weighted_adjoint(&self, w: &[f64]) -> Csr {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for r in 0..self.n {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[e];
                rows[c].push((r, self.val[e] * w[r] / w[c]));
            }
        }
        Csr::from_rows(rows)
    }
}

/// Transport operator T h = (p/p₀) ∂x h - V' ∂p h in flux form.
///
/// x-ends are specular walls (the incoming face value is taken from the
/// mirrored momentum), p-ends are open with zero inflow. Central faces make T
/// exactly W-skew on interior-supported fields; the walls conserve both mass
/// and energy, and the open p-ends only dissipate.
#[derive(Clone, Debug)]
pub struct TransportOperator {
    pub scheme: TransportScheme,
    pub matrix: Csr,
    pub adjoint: Csr,
    pub nx: usize,
    pub np: usize,
}

impl TransportOperator {
    pub fn new(eq: &EquilibriumState, scheme: TransportScheme) -> Self {
        let (nx, np) = (eq.nx(), eq.np());
        let rf = &eq.rho_face;
        let mf = &eq.m_face;
        // x-face k, momentum j, positive towards +x
        let fx = |k: usize, j: usize| -(mf[j + 1] - mf[j]) * rf[k];
        // p-face k, position i, positive towards +p
        let fp = |i: usize, k: usize| (rf[i + 1] - rf[i]) * mf[k];
        let idx = |i: usize, j: usize| i * np + j;
        let mirror = |j: usize| np - 1 - j;
        let w = &eq.cell_weight;
        let rows: Vec<Vec<(usize, f64)>> = (0..nx * np)
            .into_par_iter()
            .map(|n| {
                let (i, j) = (n / np, n % np);
                let mut r: Vec<(usize, f64)> = Vec::with_capacity(8);
                let inv_w = 1.0 / w[n];
                // face value as a linear combination of nodes, times sign*flux
                let mut push_face = |coef: f64, terms: &[(usize, f64)]| {
                    for &(m, a) in terms {
                        r.push((m, coef * a * inv_w));
                    }
                };
                for (k, sign) in [(i + 1, 1.0), (i, -1.0)] {
                    let f = fx(k, j);
                    let terms: Vec<(usize, f64)> = if k == 0 || k == nx {
                        let node = if k == 0 { 0 } else { nx - 1 };
                        let outgoing = if k == 0 { f < 0.0 } else { f > 0.0 };
                        match scheme {
                            TransportScheme::Central => {
                                vec![(idx(node, j), 0.5), (idx(node, mirror(j)), 0.5)]
                            }
                            TransportScheme::Upwind => {
                                if outgoing {
                                    vec![(idx(node, j), 1.0)]
                                } else {
                                    vec![(idx(node, mirror(j)), 1.0)]
                                }
                            }
                        }
                    } else {
                        match scheme {
                            TransportScheme::Central => {
                                vec![(idx(k - 1, j), 0.5), (idx(k, j), 0.5)]
                            }
                            TransportScheme::Upwind => {
                                if f > 0.0 {
                                    vec![(idx(k - 1, j), 1.0)]
                                } else {
                                    vec![(idx(k, j), 1.0)]
                                }
                            }
                        }
                    };
                    push_face(sign * f, &terms);
                }
                for (k, sign) in [(j + 1, 1.0), (j, -1.0)] {
                    let f = fp(i, k);
                    let terms: Vec<(usize, f64)> = if k == 0 || k == np {
                        let node = if k == 0 { 0 } else { np - 1 };
                        let outflow = if k == 0 { f < 0.0 } else { f > 0.0 };
                        if outflow {
                            vec![(idx(i, node), 1.0)]
                        } else {
                            vec![]
                        }
                    } else {
                        match scheme {
                            TransportScheme::Central => {
                                vec![(idx(i, k - 1), 0.5), (idx(i, k), 0.5)]
                            }
                            TransportScheme::Upwind => {
                                if f > 0.0 {
                                    vec![(idx(i, k - 1), 1.0)]
                                } else {
                                    vec![(idx(i, k), 1.0)]
                                }
                            }
                        }
                    };
                    push_face(sign * f, &terms);
                }
                r
            })
            .collect();
        let matrix = Csr::from_rows(rows);
        let adjoint = matrix.weighted_adjoint(w);
        TransportOperator {
            scheme,
            matrix,
            adjoint,
            nx,
            np,
        }
    }

    pub fn apply(&self, h: &[f64], out: &mut [f64]) {
        self.matrix.apply(h, out);
    }

    pub fn apply_adjoint(&self, h: &[f64], out: &mut [f64]) {
        self.adjoint.apply(h, out);
    }

    /// Upper bound on ‖T‖ in the W-norm: √(‖S‖₁‖S‖∞) for S = W^{1/2} T W^{-1/2}.
    pub fn norm_bound(&self, w: &[f64]) -> f64 {
        let m = &self.matrix;
        let mut row_max: f64 = 0.0;
        let mut col_sum = vec![0.0; m.n];
        for r in 0..m.n {
            let mut s = 0.0;
            for e in m.row_ptr[r]..m.row_ptr[r + 1] {
                let c = m.col[e];
                let v = (m.val[e] * (w[r] / w[c]).sqrt()).abs();
                s += v;
                col_sum[c] += v;
            }
            row_max = row_max.max(s);
        }
        let col_max = col_sum.iter().cloned().fold(0.0, f64::max);
        (row_max * col_max).sqrt()
    }

    /// Largest dt for which forward Euler with this matrix is a convex
    /// combination (only meaningful for upwind).
    pub fn monotone_dt(&self) -> f64 {
        let m = &self.matrix;
        let mut best = f64::INFINITY;
        for r in 0..m.n {
            let d = m.get(r, r);
            if d > 0.0 {
                best = best.min(1.0 / d);
            }
        }
        best
    }
}

/// (Πh)(x_i) = Σ_j wp_j M_j h[i,j].
pub fn projection_pi(h: &[f64], eq: &EquilibriumState) -> Vec<f64> {
    let np = eq.np();
    (0..eq.nx())
        .map(|i| {
            let v: Vec<f64> = (0..np).map(|j| eq.p_weight[j] * h[i * np + j]).collect();
            pairwise_sum(&v)
        })
        .collect()
}

/// Extends an x-function constantly in p.
pub fn lift(u: &[f64], np: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len() * np);
    for &v in u {
        out.extend(std::iter::repeat_n(v, np));
    }
    out
}

/// All operators of one discretisation.
#[derive(Clone, Debug)]
pub struct Operators {
    pub collision: CollisionOperator,
    pub transport: TransportOperator,
}

impl Operators {
    pub fn new(eq: &EquilibriumState, flux: FluxScheme, transport: TransportScheme) -> Self {
        Operators {
            collision: CollisionOperator::for_equilibrium(eq, flux),
            transport: TransportOperator::new(eq, transport),
        }
    }

    pub fn apply_collision(&self, h: &PhaseField, eq: &EquilibriumState) -> Result<PhaseField> {
        check_relative(h, eq)?;
        let mut out = PhaseField::zeros(&eq.grid, FieldKind::RelativeDensity);
        self.collision.apply(&h.values, &mut out.values);
        Ok(out)
    }

    pub fn apply_transport(&self, h: &PhaseField, eq: &EquilibriumState) -> Result<PhaseField> {
        check_relative(h, eq)?;
        let mut out = PhaseField::zeros(&eq.grid, FieldKind::RelativeDensity);
        self.transport.apply(&h.values, &mut out.values);
        Ok(out)
    }

    /// f∞ (L h - T h) for h = f/f∞ - 1: the conservative right-hand side in
    /// absolute form.
    pub fn apply_rhs(&self, f: &PhaseField, eq: &EquilibriumState) -> Result<PhaseField> {
        f.check_shape(&eq.grid)?;
        if f.kind != FieldKind::AbsoluteDensity {
            return Err(Error::Dimension(
                "apply_rhs expects an absolute density".into(),
            ));
        }
        let h: Vec<f64> = f
            .values
            .iter()
            .zip(&eq.f_inf)
            .map(|(f, g)| f / g - 1.0)
            .collect();
        let mut l = vec![0.0; h.len()];
        let mut t = vec![0.0; h.len()];
        self.collision.apply(&h, &mut l);
        self.transport.apply(&h, &mut t);
        let values = l
            .iter()
            .zip(&t)
            .zip(&eq.f_inf)
            .map(|((l, t), g)| g * (l - t))
            .collect();
        Ok(PhaseField {
            values,
            nx: f.nx,
            np: f.np,
            kind: FieldKind::AbsoluteDensity,
        })
    }
}

fn check_relative(h: &PhaseField, eq: &EquilibriumState) -> Result<()> {
    h.check_shape(&eq.grid)?;
    if h.kind != FieldKind::RelativeDensity {
        return Err(Error::Dimension(
            "operator expects a relative density".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{build_equilibrium, default_p_radius, default_x_radius, p0};
    use crate::grid::PhaseGrid;
    use crate::potentials::PotentialSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eq_for(v: PotentialSpec, nx: usize, np: usize) -> EquilibriumState {
        let g = PhaseGrid::uniform(default_x_radius(&v), nx, default_p_radius(1.0), np).unwrap();
        build_equilibrium(&g, &v, 1.0).unwrap()
    }

    fn random_field(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn interior_random(eq: &EquilibriumState, seed: u64) -> Vec<f64> {
        let (nx, np) = (eq.nx(), eq.np());
        let mut h = random_field(nx * np, seed);
        for i in 0..nx {
            for j in 0..np {
                if i == 0 || j == 0 || i == nx - 1 || j == np - 1 {
                    h[i * np + j] = 0.0;
                }
            }
        }
        h
    }

    #[test]
    fn diffusion_tensor_inverse_and_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [1, 2, 3, 5] {
            for _ in 0..50 {
                let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-20.0..20.0)).collect();
                let dm = diffusion_matrix(&p);
                let di = diffusion_inverse(&p);
                let prod = &dm * &di;
                let id = DMatrix::<f64>::identity(d, d);
                let p0v = (1.0 + p.iter().map(|v| v * v).sum::<f64>()).sqrt();
                assert!((prod - id).amax() < 1e-14 * p0v * p0v);
                let ev = dm.symmetric_eigen().eigenvalues;
                let (lo, hi) = (ev.min(), ev.max());
                assert!((hi - p0v).abs() < 1e-12 * p0v);
                if d > 1 {
                    assert!((lo - 1.0 / p0v).abs() < 1e-12);
                }
            }
        }
        assert!((diffusion_matrix(&[0.7])[(0, 0)] - p0(0.7)).abs() < 1e-15);
    }

    #[test]
    fn collision_kills_constants_and_conserves_mass() {
        let eq = eq_for(PotentialSpec::Harmonic, 16, 128);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let h = PhaseField::from_fn(&eq.grid, FieldKind::RelativeDensity, |_, _| 2.5);
        let l = ops.apply_collision(&h, &eq).unwrap();
        let np = eq.np();
        for (n, v) in l.values.iter().enumerate() {
            let scale = 2.5 * ops.collision.b.diag[n % np].abs();
            assert!(v.abs() <= 1e-13 * scale + 1e-300);
        }
        let r = PhaseField {
            values: random_field(eq.len(), 5),
            ..h
        };
        let lr = ops.apply_collision(&r, &eq).unwrap();
        assert!(eq.mean(&lr.values).abs() < 1e-12);
    }

    #[test]
    fn collision_on_p_matches_symbolic_form() {
        // L p = p/p₀ - p
        let err = |np: usize| {
            let eq = eq_for(PotentialSpec::Harmonic, 4, np);
            let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
            let h = PhaseField::from_fn(&eq.grid, FieldKind::RelativeDensity, |_, p| p);
            let l = ops.apply_collision(&h, &eq).unwrap();
            let mut e: f64 = 0.0;
            for j in 0..np {
                let p = eq.grid.p.nodes[j];
                if p.abs() < 8.0 {
                    e = e.max((l.values[j] - (p / p0(p) - p)).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(257), err(513));
        assert!(e1 < 0.05);
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn collision_symmetric_and_dissipative() {
        let eq = eq_for(PotentialSpec::double_well(), 24, 96);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        for seed in 0..10 {
            let h = random_field(eq.len(), seed);
            let g = random_field(eq.len(), seed + 100);
            let mut lh = vec![0.0; h.len()];
            let mut lg = vec![0.0; h.len()];
            ops.collision.apply(&h, &mut lh);
            ops.collision.apply(&g, &mut lg);
            let scale = eq.l2_sq(&h).sqrt() * eq.l2_sq(&g).sqrt();
            assert!((eq.inner(&lh, &g) - eq.inner(&h, &lg)).abs() <= 1e-11 * scale);
            // -⟨Lh,h⟩ = Σ wx ρ Σ k (Δh)²
            let np = eq.np();
            let form: f64 = (0..eq.nx())
                .map(|i| eq.x_weight[i] * ops.collision.dirichlet_row(&h[i * np..(i + 1) * np]))
                .sum();
            assert!((-eq.inner(&lh, &h) - form).abs() <= 1e-10 * form);
        }
    }

    #[test]
    fn centered_flux_conserves_mass_but_not_exact_stationarity() {
        let eq = eq_for(PotentialSpec::Harmonic, 8, 128);
        let ops = Operators::new(&eq, FluxScheme::Centered, TransportScheme::Central);
        let zero = PhaseField::zeros(&eq.grid, FieldKind::RelativeDensity);
        let l = ops.apply_collision(&zero, &eq).unwrap();
        // f∞ is only stationary to truncation error
        assert!(l.values.iter().any(|v| v.abs() > 1e-8));
        let f = PhaseField::from_fn(&eq.grid, FieldKind::AbsoluteDensity, |_, _| 0.0);
        let f = PhaseField {
            values: eq.f_inf.iter().map(|v| v * 1.3).collect(),
            ..f
        };
        let r = ops.apply_rhs(&f, &eq).unwrap();
        assert!(eq.grid.integrate(&r.values).abs() < 1e-12);
    }

    #[test]
    fn transport_of_constants_vanishes() {
        let eq = eq_for(PotentialSpec::Harmonic, 32, 64);
        for s in [TransportScheme::Central, TransportScheme::Upwind] {
            let ops = Operators::new(&eq, FluxScheme::ChangCooper, s);
            let h = PhaseField::from_fn(&eq.grid, FieldKind::RelativeDensity, |_, _| 1.7);
            let t = ops.apply_transport(&h, &eq).unwrap();
            // open p-ends: constants leave through the outflow faces only
            let np = eq.np();
            for i in 0..eq.nx() {
                for j in 1..np - 1 {
                    assert!(
                        t.values[i * np + j].abs()
                            < 1e-13 * 1.7 * (1.0 + t.values.len() as f64).sqrt()
                    );
                }
            }
            let zero = PhaseField::zeros(&eq.grid, FieldKind::RelativeDensity);
            assert!(ops
                .apply_transport(&zero, &eq)
                .unwrap()
                .values
                .iter()
                .all(|v| *v == 0.0));
        }
    }

    #[test]
    fn transport_of_x_converges_to_velocity() {
        let err = |nx: usize| {
            let eq = eq_for(PotentialSpec::Harmonic, nx, 2 * nx);
            let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
            let h = PhaseField::from_fn(&eq.grid, FieldKind::RelativeDensity, |x, _| x);
            let t = ops.apply_transport(&h, &eq).unwrap();
            let np = eq.np();
            let mut e: f64 = 0.0;
            for i in 1..eq.nx() - 1 {
                for j in 1..np - 1 {
                    let p = eq.grid.p.nodes[j];
                    if eq.grid.x.nodes[i].abs() < 4.0 && p.abs() < 8.0 {
                        e = e.max((t.values[i * np + j] - p / p0(p)).abs());
                    }
                }
            }
            e
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 0.1, "{e1}");
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn transport_skew_on_interior_fields() {
        let eq = eq_for(PotentialSpec::double_well(), 40, 80);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        for seed in 0..10 {
            let h = interior_random(&eq, seed);
            let g = interior_random(&eq, seed + 50);
            let mut th = vec![0.0; h.len()];
            let mut tg = vec![0.0; h.len()];
            ops.transport.apply(&h, &mut th);
            ops.transport.apply(&g, &mut tg);
            let scale = eq.l2_sq(&h).sqrt() * eq.l2_sq(&g).sqrt();
            assert!((eq.inner(&th, &g) + eq.inner(&h, &tg)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn walls_conserve_energy_and_mass() {
        // fields supported away from the p-ends but touching the x-walls
        let eq = eq_for(PotentialSpec::Harmonic, 30, 60);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let np = eq.np();
        let mut h = random_field(eq.len(), 9);
        for i in 0..eq.nx() {
            h[i * np] = 0.0;
            h[i * np + np - 1] = 0.0;
        }
        let mut th = vec![0.0; h.len()];
        ops.transport.apply(&h, &mut th);
        let scale = eq.l2_sq(&h);
        assert!(eq.inner(&th, &h).abs() < 1e-12 * scale);
        assert!(eq.mean(&th).abs() < 1e-14);
    }

    #[test]
    fn upwind_transport_is_dissipative() {
        let eq = eq_for(PotentialSpec::Harmonic, 30, 60);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Upwind);
        for seed in 0..5 {
            let h = random_field(eq.len(), seed);
            let mut th = vec![0.0; h.len()];
            ops.transport.apply(&h, &mut th);
            assert!(eq.inner(&th, &h) >= -1e-14 * eq.l2_sq(&h));
        }
    }

    #[test]
    fn adjoint_is_weighted_transpose() {
        let eq = eq_for(PotentialSpec::Harmonic, 20, 40);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let h = random_field(eq.len(), 1);
        let g = random_field(eq.len(), 2);
        let mut th = vec![0.0; h.len()];
        let mut tsg = vec![0.0; h.len()];
        ops.transport.apply(&h, &mut th);
        ops.transport.apply_adjoint(&g, &mut tsg);
        let lhs = eq.inner(&th, &g);
        let rhs = eq.inner(&h, &tsg);
        assert!((lhs - rhs).abs() < 1e-12 * (lhs.abs() + rhs.abs() + 1.0));
    }

    #[test]
    fn projection_properties() {
        let eq = eq_for(PotentialSpec::Harmonic, 48, 96);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let hx: Vec<f64> = eq.grid.x.nodes.iter().map(|x| x.sin()).collect();
        let lifted = lift(&hx, eq.np());
        let back = projection_pi(&lifted, &eq);
        for (a, b) in back.iter().zip(&hx) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = random_field(eq.len(), 4);
        let once = projection_pi(&h, &eq);
        let twice = projection_pi(&lift(&once, eq.np()), &eq);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-14);
        }
        // the x-flux column sums vanish, so Π T Π is zero to round-off
        let ptp = |eq: &EquilibriumState| {
            let ops = Operators::new(eq, FluxScheme::ChangCooper, TransportScheme::Central);
            let g: Vec<f64> = eq.grid.x.nodes.iter().map(|x| (0.7 * x).sin()).collect();
            let mut t = vec![0.0; eq.len()];
            ops.transport.apply(&lift(&g, eq.np()), &mut t);
            let p = projection_pi(&t, eq);
            p.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        };
        let _ = ops;
        let e1 = ptp(&eq_for(PotentialSpec::Harmonic, 64, 128));
        let e2 = ptp(&eq_for(PotentialSpec::Harmonic, 128, 256));
        assert!(e1 < 1e-11 && e2 < 1e-11, "{e1} {e2}");
    }

    #[test]
    fn rhs_is_conservative_and_stationary() {
        let eq = eq_for(PotentialSpec::double_well(), 64, 128);
        let ops = Operators::new(&eq, FluxScheme::ChangCooper, TransportScheme::Central);
        let finf = PhaseField {
            values: eq.f_inf.clone(),
            nx: eq.nx(),
            np: eq.np(),
            kind: FieldKind::AbsoluteDensity,
        };
        let r = ops.apply_rhs(&finf, &eq).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-14));
        let f = PhaseField::from_fn(&eq.grid, FieldKind::AbsoluteDensity, |x, p| {
            (-(x - 0.5).powi(2) - (p - 0.5).powi(2)).exp()
        });
        let r = ops.apply_rhs(&f, &eq).unwrap();
        assert!(eq.grid.integrate(&r.values).abs() < 1e-12);
    }

    #[test]
    fn collision_part_acts_on_momentum_only() {
        // for f = ρ∞(x) g(p) the collision contribution is ρ∞ times the
        // homogeneous operator applied to g
        let eq = eq_for(PotentialSpec::Harmonic, 16, 64);
        let col = CollisionOperator::for_equilibrium(&eq, FluxScheme::ChangCooper);
        let hom = CollisionOperator::new(
            &eq.grid.p,
            &eq.maxwellian,
            &eq.m_face,
            1.0,
            FluxScheme::ChangCooper,
        );
        let g: Vec<f64> = eq
            .grid
            .p
            .nodes
            .iter()
            .map(|p| (-(p - 1.0).powi(2)).exp())
            .collect();
        let hg: Vec<f64> = g
            .iter()
            .zip(&eq.maxwellian)
            .map(|(g, m)| g / m - 1.0)
            .collect();
        let mut lg = vec![0.0; g.len()];
        hom.apply_row(&hg, &mut lg);
        let h = lift(&[0.0; 16], 64)
            .iter()
            .enumerate()
            .map(|(n, _)| hg[n % 64])
            .collect::<Vec<_>>();
        let mut l = vec![0.0; h.len()];
        col.apply(&h, &mut l);
        for i in 0..16 {
            for j in 0..64 {
                assert!((l[i * 64 + j] - lg[j]).abs() < 1e-13 * (1.0 + lg[j].abs()));
            }
        }
    }

    #[test]
    fn hessian_of_p0_in_one_dimension() {
        for k in 0..100 {
            let p = -50.0 + k as f64;
            let h = 1e-3;
            let fd = (p0(p + h) - 2.0 * p0(p) + p0(p - h)) / (h * h);
            let exact = p0(p).powi(-3);
            assert!((fd - exact).abs() < 1e-6 * (1.0 + exact));
        }
    }
}
