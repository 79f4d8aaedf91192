use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::MetricField;

/// Default central-difference step for metric derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Default number of RK4 steps on [0, 1].
pub const DEFAULT_RK4_STEPS: usize = 100;

fn solve(m: DMatrix<f64>, rhs: DVector<f64>, z: &[f64]) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    m.lu().solve(&rhs).ok_or_else(|| Error::SingularMetric(z.to_vec()))
}

/// Geodesic acceleration
/// z̈ = −½ M⁻¹ [2 Σ_k (∂_k M) ż ż_k − (żᵀ (∂_i M) ż)_i]
/// with ∂_k M from the metric field (central differences of step `fd_step`
/// unless it provides exact derivatives).
pub fn ode_rhs(metric: &dyn MetricField, z: &[f64], zdot: &[f64], fd_step: f64) -> Result<Vec<f64>> {
    let d = z.len();
    if zdot.len() != d || metric.dim() != d {
        return Err(Error::Shape(format!("ODE state of size {d}/{} on a {}-dimensional metric", zdot.len(), metric.dim())));
    }
    if zdot.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; d]);
    }
    let v = DVector::from_column_slice(zdot);
    let (m, derivs) = metric.eval_with_derivatives(z, fd_step)?;
    let mut rhs = DVector::zeros(d);
    for (k, dm) in derivs.iter().enumerate() {
        rhs += (dm * &v) * (2.0 * v[k]);
        rhs[k] -= v.dot(&(dm * &v));
    }
    let acc = solve(m, rhs, z)?;
    let out: Vec<f64> = acc.iter().map(|a| -0.5 * a).collect();
    if out.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("geodesic acceleration at {z:?}")));
    }
    Ok(out)
}

/// Trajectory of the geodesic initial value problem sampled at t = i/steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl ExpPath {
    pub fn endpoint(&self) -> &[f64] {
        &self.points[self.points.len() - 1]
    }
}

/// Integrates the geodesic ODE from (z, v) over t ∈ [0, 1] with fixed-step
/// RK4.
pub fn exp_map(metric: &dyn MetricField, z: &[f64], v: &[f64], steps: usize) -> Result<ExpPath> {
    exp_map_with(metric, z, v, steps, DEFAULT_FD_STEP)
}

pub fn exp_map_with(metric: &dyn MetricField, z: &[f64], v: &[f64], steps: usize, fd_step: f64) -> Result<ExpPath> {
    if steps == 0 {
        return Err(Error::Config("RK4 needs at least one step".into()));
    }
    let d = z.len();
    let h = 1.0 / steps as f64;
    let f = |x: &[f64], xd: &[f64]| ode_rhs(metric, x, xd, fd_step);
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };

    let mut x = z.to_vec();
    let mut xd = v.to_vec();
    let mut path = ExpPath {
        times: vec![0.0],
        points: vec![x.clone()],
        velocities: vec![xd.clone()],
    };
    for i in 1..=steps {
        let k1x = xd.clone();
        let k1v = f(&x, &xd)?;
        let k2x = axpy(&xd, 0.5 * h, &k1v);
        let k2v = f(&axpy(&x, 0.5 * h, &k1x), &k2x)?;
        let k3x = axpy(&xd, 0.5 * h, &k2v);
        let k3v = f(&axpy(&x, 0.5 * h, &k2x), &k3x)?;
        let k4x = axpy(&xd, h, &k3v);
        let k4v = f(&axpy(&x, h, &k3x), &k4x)?;
        for j in 0..d {
            x[j] += h / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j]);
            xd[j] += h / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
        }
        if x.iter().chain(&xd).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("geodesic state at t = {}", i as f64 * h)));
        }
        path.times.push(i as f64 * h);
        path.points.push(x.clone());
        path.velocities.push(xd.clone());
    }
    Ok(path)
}
