//! Bilinear/trilinear elements on axis-aligned boxes, Gauss quadrature,
//! and evaluation of kernel programs into elemental matrices.

mod kernel;

use thiserror::Error;

pub use kernel::{
    eval_surface, eval_volume, face_points, CoefficientTable, CompiledKernel, ElementMatrix, QpContext, RegionProgram, SurfaceQp,
};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("Gauss rule with {0} points per axis is not supported (use 1, 2, or 3)")]
    UnsupportedOrder(usize),
    #[error("kernel is {kernel}-D but the mesh is {mesh}-D")]
    DimensionMismatch { kernel: usize, mesh: usize },
    #[error("coefficient `{0}` is not defined")]
    MissingCoefficient(String),
    #[error("field `{text}`: {message}")]
    Field { text: String, message: String },
}

/// Tensor Gauss–Legendre rule on `[-1, 1]^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn gauss_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>), FemError> {
    Ok(match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        _ => return Err(FemError::UnsupportedOrder(n)),
    })
}

pub fn gauss_rule(points_per_axis: usize, m: usize) -> Result<QuadratureRule, FemError> {
    let (x, w) = gauss_1d(points_per_axis)?;
    let n = points_per_axis;
    let count = n.pow(m as u32);
    let mut points = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for i in 0..count {
        let mut p = [0.0; 3];
        let mut wt = 1.0;
        let mut rem = i;
        for pk in p.iter_mut().take(m) {
            *pk = x[rem % n];
            wt *= w[rem % n];
            rem /= n;
        }
        points.push(p);
        weights.push(wt);
    }
    Ok(QuadratureRule { dim: m, points, weights })
}

/// Affine map from `[-1,1]^k` onto an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// Edge lengths.
    pub h: [f64; 3],
    pub det_j: f64,
}

impl ElementGeometry {
    pub fn new(lo: [f64; 3], hi: [f64; 3], dim: usize) -> Self {
        let h: [f64; 3] = std::array::from_fn(|k| if k < dim { hi[k] - lo[k] } else { 0.0 });
        ElementGeometry {
            dim,
            lo,
            hi,
            h,
            det_j: (0..dim).map(|k| h[k] / 2.0).product(),
        }
    }

    pub fn to_physical(&self, xi: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| if k < self.dim { self.lo[k] + 0.5 * (xi[k] + 1.0) * self.h[k] } else { 0.0 })
    }

    pub fn to_reference(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| if k < self.dim { 2.0 * (x[k] - self.lo[k]) / self.h[k] - 1.0 } else { 0.0 })
    }

    /// Largest edge length.
    pub fn diameter(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(0.0, f64::max)
    }

    pub fn basis_at_reference(&self, xi: [f64; 3]) -> Basis {
        Basis::at(xi, self)
    }

    pub fn basis_at(&self, x: [f64; 3]) -> Basis {
        Basis::at(self.to_reference(x), self)
    }
}

/// Corner basis values and physical gradients at one point. Corner `c`
/// sits at the upper end of axis `k` when bit `k` of `c` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis {
    pub nbf: usize,
    pub n: [f64; 8],
    pub dn: [[f64; 3]; 8],
}

impl Basis {
    fn at(xi: [f64; 3], g: &ElementGeometry) -> Self {
        let dim = g.dim;
        let nbf = 1 << dim;
        let mut n = [0.0; 8];
        let mut dn = [[0.0; 3]; 8];
        for c in 0..nbf {
            let mut f = [0.0; 3];
            let mut df = [0.0; 3];
            for k in 0..dim {
                let s = if c >> k & 1 == 1 { 1.0 } else { -1.0 };
                f[k] = 0.5 * (1.0 + s * xi[k]);
                df[k] = 0.5 * s * 2.0 / g.h[k];
            }
            n[c] = f[..dim].iter().product();
            for k in 0..dim {
                dn[c][k] = (0..dim).map(|j| if j == k { df[j] } else { f[j] }).product();
            }
        }
        Basis { nbf, n, dn }
    }

    /// Value or derivative selected by `sel` for corner `c`.
    #[inline]
    pub fn select(&self, sel: crate::symbolic::BasisSel, c: usize) -> f64 {
        match sel {
            crate::symbolic::BasisSel::Value => self.n[c],
            crate::symbolic::BasisSel::Deriv(k) => self.dn[c][k],
        }
    }

    pub fn interpolate(&self, nodal: &[f64]) -> f64 {
        (0..self.nbf).map(|c| self.n[c] * nodal[c]).sum()
    }

    pub fn gradient(&self, nodal: &[f64]) -> [f64; 3] {
        std::array::from_fn(|k| (0..self.nbf).map(|c| self.dn[c][k] * nodal[c]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule() {
        let r = gauss_rule(2, 1).unwrap();
        assert!((r.points[0][0] + 1.0 / 3f64.sqrt()).abs() < 1e-16);
        assert_eq!(r.weights, vec![1.0, 1.0]);
        let integral: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((integral - 2.0 / 3.0).abs() < 1e-15);
        let r2 = gauss_rule(2, 2).unwrap();
        assert_eq!(r2.points.len(), 4);
        assert!(r2.weights.iter().all(|w| *w == 1.0));
        assert!(matches!(gauss_rule(4, 2), Err(FemError::UnsupportedOrder(4))));
    }

    #[test]
    fn weights_sum_and_exactness() {
        for n in 1..=3 {
            for m in 1..=3 {
                let r = gauss_rule(n, m).unwrap();
                let s: f64 = r.weights.iter().sum();
                assert!((s - 2f64.powi(m as i32)).abs() < 1e-14);
                // x^(2n-1) odd vanishes; x^(2n-2) is integrated exactly.
                let deg = 2 * n as i32 - 2;
                let exact = 2.0 / (deg as f64 + 1.0) * 2f64.powi(m as i32 - 1);
                let got: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(deg)).sum();
                assert!((got - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let g = ElementGeometry::new([0.0, 1.0, 2.0], [0.5, 1.25, 2.125], 3);
        for xi in [[0.3, -0.7, 0.1], [-1.0, 1.0, 0.0]] {
            let b = g.basis_at_reference(xi);
            assert!((b.n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for k in 0..3 {
                assert!(b.dn.iter().map(|d| d[k]).sum::<f64>().abs() < 1e-13);
            }
            let p = g.to_physical(xi);
            let lin = |x: [f64; 3]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2];
            let nodal: Vec<f64> = (0..8)
                .map(|c| lin(g.to_physical([(c & 1) as f64 * 2.0 - 1.0, (c >> 1 & 1) as f64 * 2.0 - 1.0, (c >> 2 & 1) as f64 * 2.0 - 1.0])))
                .collect();
            assert!((b.interpolate(&nodal) - lin(p)).abs() < 1e-14);
            let gr = b.gradient(&nodal);
            assert!((gr[0] - 2.0).abs() < 1e-12 && (gr[1] + 1.0).abs() < 1e-12 && (gr[2] - 0.5).abs() < 1e-12);
        }
        assert_eq!(g.diameter(), 0.5);
    }
}
