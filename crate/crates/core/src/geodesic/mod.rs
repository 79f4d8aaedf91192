//! Shortest paths: spline curves whose discretized energy is minimized,
//! the geodesic ODE, and the exponential and logarithmic maps.

mod energy;
mod ode;
mod spline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, Problem};
use crate::rng::RngStream;

pub use energy::{categorical_energy, curve_length, kl_energy, Objective};
pub use ode::{exp_map, exp_map_with, ode_rhs, ExpPath, DEFAULT_FD_STEP, DEFAULT_RK4_STEPS};
pub use spline::SplineCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Central differences on the spline coefficients.
    FiniteDifference,
    /// Chain rule through closed-form KL gradients and decoder Jacobians.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// Number of curve segments N in the discretized energy.
    pub discretization: usize,
    /// Number of cubic pieces of the spline.
    pub segments: usize,
    pub max_iters: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Length of the first trial step in coefficient space.
    pub initial_step: f64,
    /// Number of L-BFGS correction pairs.
    pub history: usize,
    pub gradient: GradientMode,
    pub fd_step: f64,
    /// Standard deviation of the random perturbation of the initial
    /// straight line.
    pub jitter: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            discretization: 64,
            segments: 4,
            max_iters: 300,
            grad_tol: 1e-7,
            initial_step: 0.1,
            history: 8,
            gradient: GradientMode::FiniteDifference,
            fd_step: 1e-6,
            jitter: 1e-4,
        }
    }
}

/// Result of an energy minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    pub curve: SplineCurve,
    pub energy: f64,
    pub straight_energy: f64,
    pub length: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after every accepted optimizer step.
    pub energy_history: Vec<f64>,
}

struct CurveProblem<'a> {
    objective: Objective<'a>,
    template: SplineCurve,
    n: usize,
    crn: u64,
    analytic: bool,
    fd_step: f64,
}

impl CurveProblem<'_> {
    fn points(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.template.clone().with_coeffs(x.to_vec())?.sample_points(self.n))
    }
}

impl Problem for CurveProblem<'_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.objective.energy(&self.points(x)?, self.crn)
    }

    fn gradient(&mut self, x: &[f64], _value: f64) -> Result<Vec<f64>> {
        if self.analytic {
            let grads = self.objective.point_gradients(&self.points(x)?)?;
            return Ok(self.template.coeff_gradient(&grads));
        }
        let h = self.fd_step;
        let this = &*self;
        (0..x.len())
            .into_par_iter()
            .map(|j| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                let fp = this.objective.energy(&this.points(&xp)?, this.crn)?;
                let fm = this.objective.energy(&this.points(&xm)?, this.crn)?;
                Ok((fp - fm) / (2.0 * h))
            })
            .collect()
    }

    fn refresh(&mut self, iter: usize) -> bool {
        if self.objective.is_stochastic() {
            self.crn = iter as u64;
            true
        } else {
            false
        }
    }
}

/// Minimizes the discretized energy over spline curves from `z0` to `z1`,
/// starting at the (slightly jittered) straight line. The straight line is
/// returned whenever optimization does not improve on it.
pub fn minimize_energy(
    z0: &[f64],
    z1: &[f64],
    objective: Objective<'_>,
    cfg: &EnergyConfig,
    rng: &mut RngStream,
) -> Result<Geodesic> {
    let count = 2 * cfg.segments * z0.len();
    let x0: Vec<f64> = (0..count).map(|_| cfg.jitter * rng.standard_normal()).collect();
    minimize_energy_from(z0, z1, objective, cfg, x0)
}

/// [`minimize_energy`] started from the spline coefficients `init`, e.g.
/// those of a curve between nearby endpoints.
pub fn minimize_energy_from(
    z0: &[f64],
    z1: &[f64],
    objective: Objective<'_>,
    cfg: &EnergyConfig,
    init: Vec<f64>,
) -> Result<Geodesic> {
    if cfg.discretization < 2 {
        return Err(Error::Config(format!("discretization needs N >= 2, got {}", cfg.discretization)));
    }
    if z0.len() != objective.latent_dim() {
        return Err(Error::Shape(format!(
            "endpoints have {} entries, latent space is {}-dimensional",
            z0.len(),
            objective.latent_dim()
        )));
    }
    let straight = SplineCurve::new(z0.to_vec(), z1.to_vec(), cfg.segments)?;
    let n = cfg.discretization;
    let straight_points = straight.sample_points(n);
    let straight_energy = objective.energy(&straight_points, 0)?;
    if z0 == z1 {
        return Ok(Geodesic {
            length: 0.0,
            curve: straight,
            energy: straight_energy,
            straight_energy,
            iterations: 0,
            converged: true,
            energy_history: vec![straight_energy],
        });
    }
    let analytic = match cfg.gradient {
        GradientMode::Analytic if !objective.has_analytic_gradient() => {
            return Err(Error::Config("analytic gradients need a closed-form or explicit-metric objective".into()))
        }
        GradientMode::Analytic => true,
        GradientMode::FiniteDifference => false,
    };
    if init.len() != straight.coeffs().len() {
        return Err(Error::Shape(format!(
            "{} initial spline coefficients, expected {}",
            init.len(),
            straight.coeffs().len()
        )));
    }
    let mut problem = CurveProblem {
        objective,
        template: straight.clone(),
        n,
        crn: 0,
        analytic,
        fd_step: cfg.fd_step,
    };
    let settings = optim::Settings {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        history: cfg.history,
        initial_step: cfg.initial_step,
    };
    let outcome = optim::minimize(&mut problem, init, &settings)?;
    let optimized = straight.clone().with_coeffs(outcome.x)?;
    let points = optimized.sample_points(n);
    let energy = objective.energy(&points, 0)?;

    // keep the straight line unless the optimum beats it beyond rounding
    let improved = energy < straight_energy - 1e-12 * straight_energy.abs();
    let (curve, energy, points) = if improved {
        (optimized, energy, points)
    } else {
        (straight, straight_energy, straight_points)
    };
    let length = objective.segment_lengths(&points, 0)?.iter().sum();
    Ok(Geodesic {
        curve,
        energy,
        straight_energy,
        length,
        iterations: outcome.iterations,
        converged: outcome.converged,
        energy_history: outcome.values,
    })
}

/// Initial velocity of the shortest path from `z` to `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMap {
    pub velocity: Vec<f64>,
    pub length: f64,
    pub geodesic: Geodesic,
}

/// Log_z(y): the optimized curve's initial velocity, rescaled so that its
/// norm under the metric at `z` equals the curve length.
pub fn log_map(objective: Objective<'_>, z: &[f64], y: &[f64], cfg: &EnergyConfig, rng: &mut RngStream) -> Result<LogMap> {
    let geodesic = minimize_energy(z, y, objective, cfg, rng)?;
    log_from_geodesic(objective, z, geodesic)
}

/// [`log_map`] with the curve optimization started from `init`.
pub fn log_map_from(objective: Objective<'_>, z: &[f64], y: &[f64], cfg: &EnergyConfig, init: Vec<f64>) -> Result<LogMap> {
    let geodesic = minimize_energy_from(z, y, objective, cfg, init)?;
    log_from_geodesic(objective, z, geodesic)
}

fn log_from_geodesic(objective: Objective<'_>, z: &[f64], geodesic: Geodesic) -> Result<LogMap> {
    let (_, cdot) = geodesic.curve.eval(0.0)?;
    let m = objective.metric_at(z)?;
    let c = nalgebra::DVector::from_column_slice(&cdot);
    let speed = c.dot(&(m * &c)).max(0.0).sqrt();
    let velocity = if speed > 0.0 && geodesic.length > 0.0 {
        cdot.iter().map(|v| v * geodesic.length / speed).collect()
    } else {
        vec![0.0; z.len()]
    };
    Ok(LogMap {
        velocity,
        length: geodesic.length,
        geodesic,
    })
}
