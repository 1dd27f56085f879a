//! Truncated tensor grids in (x, p) with trapezoid quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    NoFlux,
    ZeroExtension,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisGrid {
    pub nodes: Vec<f64>,
    pub spacing: f64,
    pub truncation_radius: f64,
    pub boundary_kind: BoundaryKind,
    pub weights: Vec<f64>,
}

impl AxisGrid {
    /// Uniform nodes on [-r, r]. Nodes are placed symmetrically so that
    /// `nodes[n-1-i] == -nodes[i]` holds bit for bit.
    pub fn uniform(radius: f64, n: usize, boundary_kind: BoundaryKind) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!(
                "axis needs at least 3 nodes, got {n}"
            )));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        let dx = 2.0 * radius / (n - 1) as f64;
        let half = (n - 1) as f64 / 2.0;
        let mut nodes: Vec<f64> = (0..n).map(|i| (i as f64 - half) * dx).collect();
        for i in 0..n / 2 {
            nodes[n - 1 - i] = -nodes[i];
        }
        nodes[0] = -radius;
        nodes[n - 1] = radius;
        let mut weights = vec![dx; n];
        weights[0] = 0.5 * dx;
        weights[n - 1] = 0.5 * dx;
        Ok(AxisGrid {
            nodes,
            spacing: dx,
            truncation_radius: radius,
            boundary_kind,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node mirrored through the origin.
    pub fn mirror(&self, j: usize) -> usize {
        self.len() - 1 - j
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let v: Vec<f64> = self.weights.iter().zip(f).map(|(w, f)| w * f).collect();
        pairwise_sum(&v)
    }

    /// Centered differences inside, second-order one-sided at the ends.
    pub fn derivative(&self, f: &[f64], out: &mut [f64]) {
        let n = self.len();
        let h = self.spacing;
        out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        for i in 1..n - 1 {
            out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x: AxisGrid,
    pub p: AxisGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    AbsoluteDensity,
    RelativeDensity,
}

/// Row-major field: `values[i * np + j]` lives at (x_i, p_j).
#[derive(Clone, Debug)]
pub struct PhaseField {
    pub values: Vec<f64>,
    pub nx: usize,
    pub np: usize,
    pub kind: FieldKind,
}

impl PhaseField {
    pub fn zeros(grid: &PhaseGrid, kind: FieldKind) -> Self {
        PhaseField {
            values: vec![0.0; grid.len()],
            nx: grid.nx(),
            np: grid.np(),
            kind,
        }
    }

    pub fn from_fn<F>(grid: &PhaseGrid, kind: FieldKind, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64,
    {
        let mut values = Vec::with_capacity(grid.len());
        for &x in &grid.x.nodes {
            for &p in &grid.p.nodes {
                values.push(f(x, p));
            }
        }
        PhaseField {
            values,
            nx: grid.nx(),
            np: grid.np(),
            kind,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.np..(i + 1) * self.np]
    }

    pub fn check_shape(&self, grid: &PhaseGrid) -> Result<()> {
        if self.nx != grid.nx() || self.np != grid.np() || self.values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field {}x{} on grid {}x{}",
                self.nx,
                self.np,
                grid.nx(),
                grid.np()
            )));
        }
        Ok(())
    }
}

impl PhaseGrid {
    pub fn new(x: AxisGrid, p: AxisGrid) -> Self {
        PhaseGrid { x, p }
    }

    pub fn uniform(x_radius: f64, nx: usize, p_radius: f64, np: usize) -> Result<Self> {
        Ok(PhaseGrid {
            x: AxisGrid::uniform(x_radius, nx, BoundaryKind::NoFlux)?,
            p: AxisGrid::uniform(p_radius, np, BoundaryKind::NoFlux)?,
        })
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn np(&self) -> usize {
        self.p.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.np()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Σ wx_i wp_j field[i,j] weight[i,j], rows summed in parallel and then
    /// combined pairwise so the result does not depend on the thread count.
    pub fn integrate_phase(&self, field: &PhaseField, weight: &PhaseField) -> Result<f64> {
        field.check_shape(self)?;
        weight.check_shape(self)?;
        Ok(self.integrate_product(&field.values, &weight.values))
    }

    pub fn integrate_product(&self, a: &[f64], b: &[f64]) -> f64 {
        let np = self.np();
        let wp = &self.p.weights;
        let rows: Vec<f64> = (0..self.nx())
            .into_par_iter()
            .map(|i| {
                let r: Vec<f64> = (0..np)
                    .map(|j| wp[j] * a[i * np + j] * b[i * np + j])
                    .collect();
                self.x.weights[i] * pairwise_sum(&r)
            })
            .collect();
        pairwise_sum(&rows)
    }

    /// Σ wx wp g with a single field.
    pub fn integrate(&self, a: &[f64]) -> f64 {
        let np = self.np();
        let wp = &self.p.weights;
        let rows: Vec<f64> = (0..self.nx())
            .into_par_iter()
            .map(|i| {
                let r: Vec<f64> = (0..np).map(|j| wp[j] * a[i * np + j]).collect();
                self.x.weights[i] * pairwise_sum(&r)
            })
            .collect();
        pairwise_sum(&rows)
    }

    fn check_stencil(&self) -> Result<()> {
        if self.nx() < 3 || self.np() < 3 {
            return Err(Error::Config(
                "differencing needs at least 3 nodes per axis".into(),
            ));
        }
        Ok(())
    }

    pub fn gradient_x(&self, field: &PhaseField) -> Result<PhaseField> {
        self.check_stencil()?;
        field.check_shape(self)?;
        let mut out = PhaseField {
            values: vec![0.0; self.len()],
            ..field.clone()
        };
        self.gradient_x_into(&field.values, &mut out.values);
        Ok(out)
    }

    pub fn gradient_p(&self, field: &PhaseField) -> Result<PhaseField> {
        self.check_stencil()?;
        field.check_shape(self)?;
        let mut out = PhaseField {
            values: vec![0.0; self.len()],
            ..field.clone()
        };
        self.gradient_p_into(&field.values, &mut out.values);
        Ok(out)
    }

    pub fn gradient_x_into(&self, f: &[f64], out: &mut [f64]) {
        let (nx, np) = (self.nx(), self.np());
        let h = self.x.spacing;
        out.par_chunks_mut(np).enumerate().for_each(|(i, row)| {
            for j in 0..np {
                let at = |k: usize| f[k * np + j];
                row[j] = if i == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if i == nx - 1 {
                    (3.0 * at(nx - 1) - 4.0 * at(nx - 2) + at(nx - 3)) / (2.0 * h)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * h)
                };
            }
        });
    }

    pub fn gradient_p_into(&self, f: &[f64], out: &mut [f64]) {
        let np = self.np();
        out.par_chunks_mut(np).enumerate().for_each(|(i, row)| {
            self.p.derivative(&f[i * np..(i + 1) * np], row);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(r: f64, n: usize) -> PhaseGrid {
        PhaseGrid::uniform(r, n, r, n).unwrap()
    }

    #[test]
    fn nodes_are_mirror_symmetric() {
        for n in [3, 4, 17, 128, 255] {
            let a = AxisGrid::uniform(3.7, n, BoundaryKind::NoFlux).unwrap();
            for j in 0..n {
                assert_eq!(a.nodes[j], -a.nodes[a.mirror(j)]);
            }
            assert!(a.nodes.windows(2).all(|w| w[1] > w[0]));
            assert!((a.weights.iter().sum::<f64>() - 7.4).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_over_unit_square() {
        let g = square(1.0, 21);
        let one = PhaseField::from_fn(&g, FieldKind::AbsoluteDensity, |_, _| 1.0);
        assert!((g.integrate_phase(&one, &one).unwrap() - 4.0).abs() < 1e-12);
        let zero = PhaseField::zeros(&g, FieldKind::AbsoluteDensity);
        assert_eq!(g.integrate_phase(&zero, &one).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let g = square(1.0, 11);
        let h = square(1.0, 13);
        let a = PhaseField::zeros(&g, FieldKind::AbsoluteDensity);
        let b = PhaseField::zeros(&h, FieldKind::AbsoluteDensity);
        assert!(matches!(
            g.integrate_phase(&a, &b),
            Err(Error::Dimension(_))
        ));
    }

    /// Oracle: composite Simpson at twice the resolution on the same box.
    fn simpson_gaussian(r: f64, n: usize) -> f64 {
        let h = 2.0 * r / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let x = -r + k as f64 * h;
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * (-x * x).exp();
        }
        s * h / 3.0
    }

    #[test]
    fn gaussian_integral_matches_pi() {
        let g = square(8.0, 161);
        let f = PhaseField::from_fn(&g, FieldKind::AbsoluteDensity, |x, p| {
            (-x * x - p * p).exp()
        });
        let one = PhaseField::from_fn(&g, FieldKind::AbsoluteDensity, |_, _| 1.0);
        let got = g.integrate_phase(&f, &one).unwrap();
        let oracle = simpson_gaussian(8.0, 320).powi(2);
        assert!((got - oracle).abs() < 1e-10);
        assert!((got - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn linear_fields_integrate_exactly() {
        let g = PhaseGrid::uniform(2.0, 9, 3.0, 12).unwrap();
        let f = PhaseField::from_fn(&g, FieldKind::AbsoluteDensity, |x, p| {
            1.5 + 2.0 * x - 0.7 * p
        });
        let one = PhaseField::from_fn(&g, FieldKind::AbsoluteDensity, |_, _| 1.0);
        let exact = 1.5 * 4.0 * 6.0;
        assert!((g.integrate_phase(&f, &one).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn gradients_exact_on_low_degree() {
        let g = PhaseGrid::uniform(2.0, 21, 3.0, 31).unwrap();
        let fx = PhaseField::from_fn(&g, FieldKind::RelativeDensity, |x, _| x);
        let gx = g.gradient_x(&fx).unwrap();
        assert!(gx.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let fp = PhaseField::from_fn(&g, FieldKind::RelativeDensity, |_, p| p * p);
        let gp = g.gradient_p(&fp).unwrap();
        for i in 0..g.nx() {
            for j in 0..g.np() {
                let p = g.p.nodes[j];
                assert!((gp.values[i * g.np() + j] - 2.0 * p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |n: usize| {
            let g = PhaseGrid::uniform(3.0, n, 1.0, 5).unwrap();
            let f = PhaseField::from_fn(&g, FieldKind::RelativeDensity, |x, _| x.sin());
            let d = g.gradient_x(&f).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..g.nx() {
                e = e.max((d.values[i * g.np()] - g.x.nodes[i].cos()).abs());
            }
            e
        };
        let (e1, e2) = (err(41), err(81));
        let ratio = e1 / e2;
        assert!(ratio > 3.6 && ratio < 4.4, "ratio {ratio}");
        assert!((ratio.log2()) >= 1.9);
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(AxisGrid::uniform(1.0, 2, BoundaryKind::NoFlux).is_err());
    }

    #[test]
    fn integration_is_bilinear_and_symmetric() {
        let g = PhaseGrid::uniform(2.0, 9, 3.0, 12).unwrap();
        let a = PhaseField::from_fn(&g, FieldKind::RelativeDensity, |x, p| (x * p).sin());
        let b = PhaseField::from_fn(&g, FieldKind::RelativeDensity, |x, p| x + p * p);
        let ab = g.integrate_phase(&a, &b).unwrap();
        let ba = g.integrate_phase(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-13);
        let mut a2 = a.clone();
        a2.values.iter_mut().for_each(|v| *v *= 3.0);
        assert!((g.integrate_phase(&a2, &b).unwrap() - 3.0 * ab).abs() < 1e-12);
    }
}
