use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{symmetrize, MetricField};
use crate::error::{Error, Result};

/// Axis-aligned lattice and kernel bandwidth of a metric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    pub sigma: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if d == 0 || self.upper.len() != d || self.resolution.len() != d {
            return Err(Error::Shape("grid bounds and resolution must share one non-zero dimension".into()));
        }
        if self.resolution.iter().any(|r| *r < 2) {
            return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(u > l)) {
            return Err(Error::Config("grid upper bounds must exceed lower bounds".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("grid bandwidth must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice points, first axis varying slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..self.len())
            .map(|mut idx| {
                let mut p = vec![0.0; d];
                for k in (0..d).rev() {
                    let r = self.resolution[k];
                    let i = idx % r;
                    idx /= r;
                    p[k] = self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (r - 1) as f64;
                }
                p
            })
            .collect()
    }
}

/// Metric tensors stored on a lattice and blended with normalized Gaussian
/// kernel weights w_s(z) ∝ exp(−‖z_s − z‖² / 2σ²).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrid {
    spec: GridSpec,
    points: Vec<Vec<f64>>,
    tensors: Vec<DMatrix<f64>>,
    // column-major tensors, concatenated
    flat: Vec<f64>,
}

/// Kernel terms beyond this many units of 2σ² below the nearest point are
/// below 1e-17 relative weight and skipped.
const KERNEL_CUTOFF: f64 = 40.0;

impl MetricGrid {
    pub fn new(spec: GridSpec, tensors: Vec<DMatrix<f64>>) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim();
        if tensors.len() != spec.len() {
            return Err(Error::Shape(format!("grid has {} points but {} tensors", spec.len(), tensors.len())));
        }
        if tensors.iter().any(|t| t.nrows() != d || t.ncols() != d) {
            return Err(Error::Shape(format!("grid tensors must be {d}x{d}")));
        }
        if tensors.iter().flat_map(|t| t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid tensor".into()));
        }
        let tensors: Vec<DMatrix<f64>> = tensors.into_iter().map(symmetrize).collect();
        let flat = tensors.iter().flat_map(|t| t.iter().copied()).collect();
        Ok(Self {
            points: spec.points(),
            spec,
            tensors,
            flat,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tensors(&self) -> &[DMatrix<f64>] {
        &self.tensors
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn squared_distances(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!("point has {} entries, grid is {}-dimensional", z.len(), self.dim())));
        }
        let d2: Vec<f64> = self
            .points
            .iter()
            .map(|p| p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let min = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(Error::NonFinite(format!("grid query {z:?}")));
        }
        Ok((d2, min))
    }

    /// Normalized kernel weights at `z`. Distances are shifted by the nearest
    /// one before exponentiation, so far-field queries degrade to the nearest
    /// lattice tensor instead of underflowing.
    pub fn weights(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (d2, min) = self.squared_distances(z)?;
        let s2 = 2.0 * self.spec.sigma * self.spec.sigma;
        let mut w: Vec<f64> = d2.iter().map(|v| (-(v - min) / s2).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// M(z) and, if `grad` is set, the exact kernel derivatives ∂M/∂z_k.
    fn blend(&self, z: &[f64], grad: bool) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let (d2, min) = self.squared_distances(z)?;
        let d = self.dim();
        let dd = d * d;
        let sigma2 = self.spec.sigma * self.spec.sigma;
        let mut total = 0.0;
        let mut m = vec![0.0; dd];
        // Σ w_s a_sk T_s and Σ w_s a_sk with a_sk = (x_sk − z_k)/σ²
        let mut dm = vec![0.0; if grad { d * dd } else { 0 }];
        let mut da = vec![0.0; d];
        for (s, v) in d2.iter().enumerate() {
            let e = (v - min) / (2.0 * sigma2);
            if e > KERNEL_CUTOFF {
                continue;
            }
            let w = (-e).exp();
            total += w;
            let t = &self.flat[s * dd..(s + 1) * dd];
            for (mi, ti) in m.iter_mut().zip(t) {
                *mi += w * ti;
            }
            if grad {
                for k in 0..d {
                    let a = w * (self.points[s][k] - z[k]) / sigma2;
                    da[k] += a;
                    for (mi, ti) in dm[k * dd..(k + 1) * dd].iter_mut().zip(t) {
                        *mi += a * ti;
                    }
                }
            }
        }
        let m = DMatrix::from_iterator(d, d, m.into_iter().map(|v| v / total));
        let derivs = (0..if grad { d } else { 0 })
            .map(|k| {
                let raw = DMatrix::from_iterator(d, d, dm[k * dd..(k + 1) * dd].iter().map(|v| v / total));
                raw - &m * (da[k] / total)
            })
            .collect();
        Ok((m, derivs))
    }
}

impl MetricField for MetricGrid {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.blend(z, false)?.0)
    }

    fn eval_with_derivatives(&self, z: &[f64], _fd_step: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let (m, derivs) = self.blend(z, true)?;
        Ok((m, derivs))
    }
}

/// Evaluates `metric` at every lattice point of `spec`.
pub fn grid_build(metric: &dyn MetricField, spec: GridSpec) -> Result<MetricGrid> {
    spec.validate()?;
    if spec.dim() != metric.dim() {
        return Err(Error::Shape(format!("grid is {}-dimensional, metric is {}", spec.dim(), metric.dim())));
    }
    let tensors = spec
        .points()
        .par_iter()
        .map(|p| metric.eval(p))
        .collect::<Result<Vec<_>>>()?;
    MetricGrid::new(spec, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::metric::{FnMetric, LatentMetric};

    fn unit_square(res: usize, sigma: f64) -> GridSpec {
        GridSpec {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            resolution: vec![res, res],
            sigma,
        }
    }

    #[test]
    fn corners_of_a_two_by_two_grid() {
        let spec = unit_square(2, 0.5);
        assert_eq!(spec.points(), vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let c = LatentMetric::Constant(DMatrix::identity(2, 2) * 3.0);
        let g = grid_build(&c, spec).unwrap();
        assert_eq!(g.tensors().len(), 4);
        assert!(g.tensors().iter().all(|t| *t == DMatrix::identity(2, 2) * 3.0));
    }

    #[test]
    fn concentrated_kernel_returns_lattice_tensor() {
        let spacing = 0.25;
        let metric = FnMetric::new(2, |z: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 + z[0], 2.0 + z[1] * z[1]])));
        let g = grid_build(&metric, unit_square(5, 1e-3 * spacing)).unwrap();
        let z = [0.5, 0.75];
        let m = g.eval(&z).unwrap();
        assert!((m - metric.eval(&z).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn equidistant_point_averages() {
        let spec = GridSpec {
            lower: vec![0.0],
            upper: vec![1.0],
            resolution: vec![2],
            sigma: 0.3,
        };
        let g = MetricGrid::new(spec, vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 3.0)]).unwrap();
        assert!((g.eval(&[0.5]).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_normalize_and_far_field_is_nearest() {
        let metric = FnMetric::new(2, |z: &[f64]| DMatrix::identity(2, 2) * (1.0 + z[0] + 2.0 * z[1]));
        let g = grid_build(&metric, unit_square(6, 0.05)).unwrap();
        for z in [[0.1, 0.3], [0.77, 0.02], [-3.0, 2.0]] {
            let w = g.weights(&z).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let far = g.eval(&[1e4, 1e4]).unwrap();
        assert!((far[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn convex_combination_bounds() {
        let metric = FnMetric::new(2, |z: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(vec![(2.0 * z[0]).exp(), 1.0 + z[1]])));
        let g = grid_build(&metric, unit_square(4, 0.2)).unwrap();
        let (lo, hi) = (1.0, 2f64.exp());
        for z in [[0.3, 0.1], [0.9, 0.9], [0.5, 0.5]] {
            let eig = g.eval(&z).unwrap().symmetric_eigenvalues();
            assert!(eig.iter().all(|l| *l >= lo - 1e-12 && *l <= hi + 1e-12));
        }
    }

    #[test]
    fn kernel_derivatives_match_differences() {
        let metric = FnMetric::new(2, |z: &[f64]| {
            DMatrix::from_row_slice(2, 2, &[1.0 + z[0] * z[0], 0.3 * z[1], 0.3 * z[1], 2.0 + z[0].sin()])
        });
        let g = grid_build(&metric, unit_square(7, 0.15)).unwrap();
        let z = [0.37, 0.61];
        let (m, derivs) = g.eval_with_derivatives(&z, 0.0).unwrap();
        assert_eq!(m, g.eval(&z).unwrap());
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (g.eval(&zp).unwrap() - g.eval(&zm).unwrap()) / (2.0 * h);
            assert!((&derivs[k] - fd).amax() < 1e-7);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(unit_square(1, 0.1).validate().is_err());
        assert!(unit_square(3, 0.0).validate().is_err());
    }
}
