//! Confining potentials with analytic derivatives and sampled certification of
//! the growth conditions ΔV ≤ c1 + (c2/2)|∇V|² and ‖∂²V‖ ≤ c3(1+|∇V|).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::AxisGrid;

/// One-dimensional potential. Higher dimensions use the separable extension
/// V(x) = Σ_k V(x_k).
pub trait Potential1d: Sync {
    fn value(&self, x: f64) -> f64;
    fn grad(&self, x: f64) -> f64;
    fn hess(&self, x: f64) -> f64;

    fn v0(&self, x: f64) -> f64 {
        let g = self.grad(x);
        (1.0 + g * g).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// x²/2
    Harmonic,
    /// r x^{2k}
    EvenPower { r: f64, k: u32 },
    /// Σ c_n x^n
    Polynomial { coeffs: Vec<f64> },
    /// a (x² - b)²
    DoubleWell { a: f64, b: f64 },
}

impl PotentialSpec {
    pub fn quartic() -> Self {
        PotentialSpec::EvenPower { r: 0.25, k: 2 }
    }

    pub fn double_well() -> Self {
        PotentialSpec::DoubleWell { a: 1.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::EvenPower { r, k } if !(*r > 0.0) || *k < 2 => Err(Error::Config(
                format!("even_power needs r > 0 and k > 1, got r={r}, k={k}"),
            )),
            PotentialSpec::DoubleWell { a, .. } if !(*a > 0.0) => {
                Err(Error::Config(format!("double_well needs a > 0, got {a}")))
            }
            PotentialSpec::Polynomial { coeffs } if coeffs.iter().any(|c| !c.is_finite()) => Err(
                Error::Config("polynomial coefficients must be finite".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PotentialSpec::Harmonic => "harmonic".into(),
            PotentialSpec::EvenPower { r, k } => format!("even_power(r={r},k={k})"),
            PotentialSpec::Polynomial { coeffs } => format!("polynomial({coeffs:?})"),
            PotentialSpec::DoubleWell { a, b } => format!("double_well(a={a},b={b})"),
        }
    }

    /// Separable extension to R^d: returns (V, ∇V, diagonal of ∂²V).
    pub fn eval_nd(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let v = x.iter().map(|&xi| self.value(xi)).sum();
        let g = x.iter().map(|&xi| self.grad(xi)).collect();
        let h = x.iter().map(|&xi| self.hess(xi)).collect();
        (v, g, h)
    }

    /// Radius beyond which e^{-(V - min V)} < e^{-tail_exponent}.
    pub fn tail_radius(&self, tail_exponent: f64) -> f64 {
        let vmin = (0..=4000)
            .map(|k| self.value(-10.0 + k as f64 * 0.005))
            .fold(f64::INFINITY, f64::min);
        let mut r = 0.5;
        while r < 1e3 {
            if self.value(r) - vmin >= tail_exponent && self.value(-r) - vmin >= tail_exponent {
                return r;
            }
            r *= 1.01;
        }
        r
    }
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl Potential1d for PotentialSpec {
    fn value(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Harmonic => 0.5 * x * x,
            PotentialSpec::EvenPower { r, k } => r * x.powi(2 * *k as i32),
            PotentialSpec::Polynomial { coeffs } => poly_eval(coeffs, x),
            PotentialSpec::DoubleWell { a, b } => a * (x * x - b) * (x * x - b),
        }
    }

    fn grad(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Harmonic => x,
            PotentialSpec::EvenPower { r, k } => {
                let n = 2 * *k as i32;
                r * n as f64 * x.powi(n - 1)
            }
            PotentialSpec::Polynomial { coeffs } => {
                let d: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(n, c)| n as f64 * c)
                    .collect();
                poly_eval(&d, x)
            }
            PotentialSpec::DoubleWell { a, b } => 4.0 * a * x * (x * x - b),
        }
    }

    fn hess(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Harmonic => 1.0,
            PotentialSpec::EvenPower { r, k } => {
                let n = 2 * *k as i32;
                r * (n * (n - 1)) as f64 * x.powi(n - 2)
            }
            PotentialSpec::Polynomial { coeffs } => {
                let d: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(n, c)| (n * (n - 1)) as f64 * c)
                    .collect();
                poly_eval(&d, x)
            }
            PotentialSpec::DoubleWell { a, b } => a * (12.0 * x * x - 4.0 * b),
        }
    }
}

/// Smallest accepted c1 and c3 when the derivative terms vanish identically.
pub const CONSTANT_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub certified_radius: f64,
    /// Location of the maximum of ΔV - (c2/2)|∇V|².
    pub argmax_c1: f64,
    /// Location of the maximum of |∂²V| / (1 + |∇V|).
    pub argmax_c3: f64,
}

/// Maximum of `g` over the nodes, refined by golden-section search around
/// every node that is a discrete local maximum.
fn refined_max<G: Fn(f64) -> f64>(nodes: &[f64], g: G) -> (f64, f64) {
    let n = nodes.len();
    let vals: Vec<f64> = nodes.iter().map(|&x| g(x)).collect();
    let mut best = (f64::NEG_INFINITY, nodes[0]);
    for i in 0..n {
        if vals[i] > best.0 {
            best = (vals[i], nodes[i]);
        }
    }
    for i in 0..n {
        let left = if i > 0 {
            vals[i - 1]
        } else {
            f64::NEG_INFINITY
        };
        let right = if i + 1 < n {
            vals[i + 1]
        } else {
            f64::NEG_INFINITY
        };
        if vals[i] < left || vals[i] < right {
            continue;
        }
        let a = nodes[i.saturating_sub(1)];
        let b = nodes[(i + 1).min(n - 1)];
        let (v, x) = golden_max(&g, a, b);
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

fn golden_max<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..120 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    let candidates = [(g(a), a), (gc, c), (gd, d), (g(b), b)];
    candidates.into_iter().fold(
        (f64::NEG_INFINITY, a),
        |acc, v| if v.0 > acc.0 { v } else { acc },
    )
}

fn c1_for<V: Potential1d + ?Sized>(v: &V, nodes: &[f64], c2: f64) -> (f64, f64, bool) {
    let g = |x: f64| {
        let d = v.grad(x);
        v.hess(x) - 0.5 * c2 * d * d
    };
    let (m, at) = refined_max(nodes, g);
    let n = nodes.len();
    // still climbing at the truncation edge: the supremum is not attained on the grid
    let escaping = g(nodes[0]) > g(nodes[1]) || g(nodes[n - 1]) > g(nodes[n - 2]);
    (m.max(CONSTANT_FLOOR), at, escaping)
}

/// Sampled certification of the growth conditions on `axis`.
///
/// c2 is scanned over {0, 0.1, ..., 0.9}; the minimiser of c1 is capped at
/// 0.5 and c1 recomputed for the capped value. Ties go to the smaller c2.
pub fn assumption_constants<V: Potential1d + ?Sized>(
    v: &V,
    axis: &AxisGrid,
) -> Result<AssumptionConstants> {
    let nodes = &axis.nodes;
    let mut best: Option<(f64, f64)> = None;
    let mut worst_node = nodes[0];
    for k in 0..10 {
        let c2 = k as f64 / 10.0;
        let (c1, at, escaping) = c1_for(v, nodes, c2);
        if escaping {
            worst_node = at;
            continue;
        }
        match best {
            Some((b1, _)) if c1 >= b1 * (1.0 - 1e-12) => {}
            _ => best = Some((c1, c2)),
        }
    }
    let (_, c2_fit) = best.ok_or_else(|| {
        Error::Certification(format!(
            "no c2 < 1 bounds ΔV - (c2/2)|∇V|² on the grid; constraint still increasing at x = {worst_node}"
        ))
    })?;
    let mut c2 = c2_fit.min(0.5);
    let (mut c1, mut argmax_c1, escaping) = c1_for(v, nodes, c2);
    if escaping {
        c2 = c2_fit;
        let r = c1_for(v, nodes, c2);
        c1 = r.0;
        argmax_c1 = r.1;
    }
    let (c3, argmax_c3) = refined_max(nodes, |x| v.hess(x).abs() / (1.0 + v.grad(x).abs()));
    Ok(AssumptionConstants {
        c1,
        c2,
        c3: c3.max(CONSTANT_FLOOR),
        certified_radius: axis.truncation_radius,
        argmax_c1,
        argmax_c3,
    })
}

/// Largest relative violation of both inequalities on `samples` points.
pub fn max_violation<V: Potential1d + ?Sized>(
    v: &V,
    c: &AssumptionConstants,
    samples: usize,
) -> f64 {
    let r = c.certified_radius;
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let x = -r + 2.0 * r * k as f64 / (samples - 1) as f64;
        let d = v.grad(x);
        let h = v.hess(x);
        let rhs1 = c.c1 + 0.5 * c.c2 * d * d;
        worst = worst.max((h - rhs1) / rhs1.abs().max(1.0));
        let rhs3 = c.c3 * (1.0 + d.abs());
        worst = worst.max((h.abs() - rhs3) / rhs3.abs().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryKind;

    fn axis(r: f64, n: usize) -> AxisGrid {
        AxisGrid::uniform(r, n, BoundaryKind::NoFlux).unwrap()
    }

    #[test]
    fn v0_values() {
        let h = PotentialSpec::Harmonic;
        assert_eq!(h.v0(0.0), 1.0);
        assert!((h.v0(1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((PotentialSpec::quartic().v0(2.0) - 65f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn derivatives_consistent_with_values() {
        let specs = [
            PotentialSpec::Harmonic,
            PotentialSpec::quartic(),
            PotentialSpec::EvenPower { r: 0.3, k: 3 },
            PotentialSpec::double_well(),
            PotentialSpec::Polynomial {
                coeffs: vec![0.1, -0.2, 0.5, 0.05, 0.1],
            },
        ];
        for s in &specs {
            let err = |h: f64| {
                let mut e: f64 = 0.0;
                for k in 0..41 {
                    let x = -2.0 + 0.1 * k as f64;
                    let dg = (s.value(x + h) - s.value(x - h)) / (2.0 * h);
                    let dh = (s.grad(x + h) - s.grad(x - h)) / (2.0 * h);
                    e = e.max((dg - s.grad(x)).abs()).max((dh - s.hess(x)).abs());
                }
                e
            };
            let (e1, e2) = (err(1e-2), err(5e-3));
            if e1 > 1e-9 {
                let ratio = e1 / e2;
                assert!(ratio > 3.5 && ratio < 4.5, "{}: ratio {ratio}", s.name());
            }
        }
    }

    #[test]
    fn harmonic_constants() {
        let c = assumption_constants(&PotentialSpec::Harmonic, &axis(8.0, 201)).unwrap();
        assert_eq!(c.c2, 0.0);
        assert!((c.c1 - 1.0).abs() < 1e-14);
        assert!((c.c3 - 1.0).abs() < 1e-14);
        assert_eq!(c.certified_radius, 8.0);
    }

    #[test]
    fn quartic_constants_against_grid_search() {
        let c = assumption_constants(&PotentialSpec::quartic(), &axis(3.0, 301)).unwrap();
        assert_eq!(c.c2, 0.5);
        // brute-force oracle on a very fine grid: max 3x² - x⁶/4 = 4 at x² = 2
        let brute = (0..=600_000)
            .map(|k| {
                let x = -3.0 + 1e-5 * k as f64;
                3.0 * x * x - x.powi(6) / 4.0
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((c.c1 - brute).abs() < 1e-8);
        assert!((c.c1 - 4.0).abs() < 1e-10);
        assert!((c.argmax_c1.abs() - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn zero_potential_hits_floor() {
        let z = PotentialSpec::Polynomial { coeffs: vec![0.0] };
        let c = assumption_constants(&z, &axis(2.0, 21)).unwrap();
        assert_eq!(c.c1, CONSTANT_FLOOR);
        assert_eq!(c.c2, 0.0);
        assert_eq!(c.c3, CONSTANT_FLOOR);
    }

    struct CurvedButFlat;
    impl Potential1d for CurvedButFlat {
        fn value(&self, _: f64) -> f64 {
            0.0
        }
        fn grad(&self, _: f64) -> f64 {
            0.0
        }
        fn hess(&self, x: f64) -> f64 {
            x * x
        }
    }

    #[test]
    fn unbounded_curvature_fails_certification() {
        let e = assumption_constants(&CurvedButFlat, &axis(2.0, 21)).unwrap_err();
        assert!(matches!(e, Error::Certification(_)));
    }

    #[test]
    fn denser_resampling_does_not_violate() {
        for s in [
            PotentialSpec::Harmonic,
            PotentialSpec::quartic(),
            PotentialSpec::double_well(),
        ] {
            let a = axis(3.0, 61);
            let c = assumption_constants(&s, &a).unwrap();
            assert!(max_violation(&s, &c, 610) <= 1e-9, "{}", s.name());
        }
    }

    #[test]
    fn tail_radius_for_harmonic() {
        let r = PotentialSpec::Harmonic.tail_radius(30.0);
        assert!((r * r / 2.0 - 30.0).abs() < 0.7);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(PotentialSpec::EvenPower { r: 1.0, k: 1 }
            .validate()
            .is_err());
        assert!(PotentialSpec::EvenPower { r: -1.0, k: 2 }
            .validate()
            .is_err());
        assert!(PotentialSpec::DoubleWell { a: 0.0, b: 1.0 }
            .validate()
            .is_err());
    }
}
