//! Locally adaptive normal distribution (LAND) on a latent manifold:
//! ρ(z) = C · exp(−½ Log_μ(z)ᵀ Γ Log_μ(z)).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{exp_map, log_map, log_map_from, EnergyConfig, ExpPath, GradientMode, Objective};
use crate::metric::{half_log_det, MetricField};
use crate::optim::{self, Problem};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandConfig {
    /// Tangent samples for the normalization constant.
    pub mc_samples: usize,
    /// RK4 steps of every exponential map.
    pub rk4_steps: usize,
    /// Settings of the log-map curve optimizations. Fields missing from a
    /// config file keep the values below, not the general energy defaults.
    #[serde(deserialize_with = "geodesic_overlay")]
    pub geodesic: EnergyConfig,
    pub max_iters: usize,
    /// Stop once the largest NLL gradient component per data point falls
    /// below this.
    pub grad_tol: f64,
    /// Central-difference step of the mean gradient.
    pub fd_step: f64,
    /// Added to the Euclidean covariance before inverting it for the
    /// initial precision.
    pub ridge: f64,
}

impl Default for LandConfig {
    fn default() -> Self {
        Self {
            mc_samples: 512,
            rk4_steps: 20,
            geodesic: EnergyConfig {
                discretization: 32,
                segments: 1,
                max_iters: 100,
                grad_tol: 1e-6,
                gradient: GradientMode::Analytic,
                ..EnergyConfig::default()
            },
            max_iters: 50,
            grad_tol: 1e-4,
            fd_step: 1e-3,
            ridge: 1e-6,
        }
    }
}

fn geodesic_overlay<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<EnergyConfig, D::Error> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Partial {
        discretization: Option<usize>,
        segments: Option<usize>,
        max_iters: Option<usize>,
        grad_tol: Option<f64>,
        initial_step: Option<f64>,
        history: Option<usize>,
        gradient: Option<GradientMode>,
        fd_step: Option<f64>,
        jitter: Option<f64>,
    }
    let p = Partial::deserialize(de)?;
    let mut c = LandConfig::default().geodesic;
    c.discretization = p.discretization.unwrap_or(c.discretization);
    c.segments = p.segments.unwrap_or(c.segments);
    c.max_iters = p.max_iters.unwrap_or(c.max_iters);
    c.grad_tol = p.grad_tol.unwrap_or(c.grad_tol);
    c.initial_step = p.initial_step.unwrap_or(c.initial_step);
    c.history = p.history.unwrap_or(c.history);
    c.gradient = p.gradient.unwrap_or(c.gradient);
    c.fd_step = p.fd_step.unwrap_or(c.fd_step);
    c.jitter = p.jitter.unwrap_or(c.jitter);
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandModel {
    pub mean: Vec<f64>,
    pub precision: DMatrix<f64>,
    pub norm_const: f64,
    /// Monte Carlo standard error of `norm_const`.
    pub norm_const_se: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl LandModel {
    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if d == 0 || self.precision.nrows() != d || self.precision.ncols() != d {
            return Err(Error::Shape(format!(
                "mean has {d} entries, precision is {}x{}",
                self.precision.nrows(),
                self.precision.ncols()
            )));
        }
        check_precision(&self.precision)?;
        if !(self.norm_const > 0.0 && self.norm_const.is_finite()) {
            return Err(Error::Config(format!("normalization constant must be positive, got {}", self.norm_const)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_precision(p: &DMatrix<f64>) -> Result<()> {
    let asym = (p - p.transpose()).abs().max();
    if asym > 1e-10 * p.abs().max().max(1.0) || p.clone().cholesky().is_none() {
        return Err(Error::Config("precision must be symmetric positive definite".into()));
    }
    Ok(())
}

/// Estimated normalization constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub value: f64,
    pub std_error: f64,
    /// Effective sample size of the volume weights.
    pub ess: f64,
}

/// Fixed-step exp map that retries with 2, 4, 8 and 16 times the steps when
/// the integration blows up, as it can where the metric changes by orders of
/// magnitude at the edge of the data.
fn exp_map_refined(metric: &dyn MetricField, z: &[f64], v: &[f64], steps: usize) -> Result<ExpPath> {
    let mut n = steps;
    loop {
        match exp_map(metric, z, v, n) {
            Err(Error::NonFinite(_)) if n < 16 * steps => n *= 2,
            other => return other,
        }
    }
}

fn volume_ratios(metric: &dyn MetricField, mean: &[f64], tangents: &[DVector<f64>], steps: usize) -> Result<Vec<f64>> {
    let base = half_log_det(&metric.eval(mean)?).ok_or_else(|| Error::SingularMetric(mean.to_vec()))?;
    tangents
        .par_iter()
        .map(|v| {
            let path = exp_map_refined(metric, mean, v.as_slice(), steps)?;
            let end = path.endpoint();
            let h = half_log_det(&metric.eval(end)?).ok_or_else(|| Error::SingularMetric(end.to_vec()))?;
            Ok((h - base).exp())
        })
        .collect()
}

fn gaussian_log_norm(precision: &DMatrix<f64>) -> f64 {
    let d = precision.nrows() as f64;
    half_log_det(precision).unwrap_or(f64::NAN) - 0.5 * d * (2.0 * PI).ln()
}

/// Importance estimate of C with tangent proposal N(0, Γ⁻¹):
/// C⁻¹ = (2π)^{d/2} det Γ^{−1/2} · mean_i √det M(Exp_μ(v_i)) / √det M(μ).
pub fn land_normalizer(
    mean: &[f64],
    precision: &DMatrix<f64>,
    metric: &dyn MetricField,
    rng: &mut RngStream,
    n: usize,
    rk4_steps: usize,
) -> Result<Normalizer> {
    if n < 2 {
        return Err(Error::Config("the normalizer needs at least two samples".into()));
    }
    let d = mean.len();
    if metric.dim() != d || precision.nrows() != d {
        return Err(Error::Shape(format!("mean of size {d} with a {}-dimensional metric", metric.dim())));
    }
    check_precision(precision)?;
    let lt = precision.clone().cholesky().expect("checked").l().transpose();
    let tangents: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            let eps = DVector::from_fn(d, |_, _| rng.standard_normal());
            lt.solve_upper_triangular(&eps).expect("triangular factor is nonsingular")
        })
        .collect();
    let m = volume_ratios(metric, mean, &tangents, rk4_steps)?;
    let nf = n as f64;
    let mean_m = m.iter().sum::<f64>() / nf;
    let var = m.iter().map(|v| (v - mean_m).powi(2)).sum::<f64>() / (nf - 1.0);
    let ess = m.iter().sum::<f64>().powi(2) / m.iter().map(|v| v * v).sum::<f64>();
    if !(ess >= 10.0) || !(mean_m > 0.0) {
        return Err(Error::DegenerateEstimate { ess });
    }
    let value = gaussian_log_norm(precision).exp() / mean_m;
    Ok(Normalizer {
        value,
        std_error: value * (var / nf).sqrt() / mean_m,
        ess,
    })
}

/// Log maps of `points` from `mean` and the spline coefficients of their
/// curves. Optimizations start from `warm[i]` when given, otherwise from a
/// jittered straight line seeded by `seed` and the point index.
fn log_maps(
    metric: &dyn MetricField,
    mean: &[f64],
    points: &[Vec<f64>],
    cfg: &EnergyConfig,
    seed: u64,
    warm: Option<&[Vec<f64>]>,
) -> Result<(Vec<DVector<f64>>, Vec<Vec<f64>>)> {
    let out: Vec<(DVector<f64>, Vec<f64>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let objective = Objective::Metric(metric);
            let log = match warm {
                Some(w) => log_map_from(objective, mean, x, cfg, w[i].clone())?,
                None => log_map(objective, mean, x, cfg, &mut RngStream::derive(seed, i as u64))?,
            };
            Ok((DVector::from_vec(log.velocity), log.geodesic.curve.coeffs().to_vec()))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// log C − ½ vᵀΓv with v = Log_μ(z).
pub fn land_logpdf(model: &LandModel, metric: &dyn MetricField, z: &[f64], cfg: &EnergyConfig) -> Result<f64> {
    let v = log_maps(metric, &model.mean, &[z.to_vec()], cfg, model.seed, None)?.0.remove(0);
    Ok(model.norm_const.ln() - 0.5 * v.dot(&(&model.precision * &v)))
}

/// Negative log-likelihood of `points`.
pub fn land_nll(model: &LandModel, metric: &dyn MetricField, points: &[Vec<f64>], cfg: &EnergyConfig) -> Result<f64> {
    let (vs, _) = log_maps(metric, &model.mean, points, cfg, model.seed, None)?;
    let quad: f64 = vs.iter().map(|v| v.dot(&(&model.precision * v))).sum();
    Ok(-(points.len() as f64) * model.norm_const.ln() + 0.5 * quad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: LandModel,
    /// Fit objective after every accepted step.
    pub nll_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lower-triangular entries of the Cholesky factor, diagonal logged.
fn log_cholesky(precision: &DMatrix<f64>) -> Vec<f64> {
    let l = precision.clone().cholesky().expect("checked").l();
    let d = l.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
    out
}

fn cholesky_factor(theta: &[f64], d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    l
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Volume ratios and data log maps at one mean.
struct MeanState {
    mean: Vec<f64>,
    logs: Vec<DVector<f64>>,
    coeffs: Vec<Vec<f64>>,
    volumes: Vec<f64>,
}

/// NLL in (μ, log-Cholesky(Γ)). The normalizer uses tangent samples drawn
/// once from N(0, Γ₀⁻¹) and self-normalized reweighting to the current Γ,
/// so the exponential maps depend on μ alone.
struct LandProblem<'a> {
    metric: &'a dyn MetricField,
    points: &'a [Vec<f64>],
    cfg: LandConfig,
    seed: u64,
    tangents: Vec<DVector<f64>>,
    /// log q(v_s) up to the constant shared with the target density.
    log_proposal: Vec<f64>,
    cache: Option<MeanState>,
    /// Curve coefficients from the last objective evaluation; every new
    /// mean, including the finite-difference probes, starts from them.
    warm: Option<Vec<Vec<f64>>>,
}

impl LandProblem<'_> {
    fn state(&mut self, mean: &[f64]) -> Result<()> {
        if self.cache.as_ref().is_none_or(|c| c.mean != mean) {
            let warm = self.warm.as_deref();
            let (logs, coeffs) = log_maps(self.metric, mean, self.points, &self.cfg.geodesic, self.seed, warm)?;
            let volumes = volume_ratios(self.metric, mean, &self.tangents, self.cfg.rk4_steps)?;
            self.cache = Some(MeanState {
                mean: mean.to_vec(),
                logs,
                coeffs,
                volumes,
            });
        }
        Ok(())
    }

    fn cached(&self) -> &MeanState {
        self.cache.as_ref().expect("state computed first")
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], DMatrix<f64>) {
        let d = self.metric.dim();
        let l = cholesky_factor(&x[d..], d);
        (&x[..d], &l * l.transpose())
    }

    /// log r_s, the unnormalized log weights of the proposal samples.
    fn log_weights(&self, precision: &DMatrix<f64>) -> Vec<f64> {
        let hld = half_log_det(precision).unwrap_or(f64::NAN);
        self.tangents
            .iter()
            .zip(&self.log_proposal)
            .map(|(v, lq)| hld - 0.5 * v.dot(&(precision * v)) - lq)
            .collect()
    }

    fn nll_at(&mut self, mean: &[f64], precision: &DMatrix<f64>) -> Result<f64> {
        let lr = self.log_weights(precision);
        let n = self.points.len() as f64;
        let d = mean.len() as f64;
        self.state(mean)?;
        let state = self.cached();
        let quad: f64 = state.logs.iter().map(|v| v.dot(&(precision * v))).sum();
        let log_inv_c = 0.5 * d * (2.0 * PI).ln() - half_log_det(precision).unwrap_or(f64::NAN)
            + log_sum_exp(lr.iter().zip(&state.volumes).map(|(l, m)| l + m.ln()))
            - log_sum_exp(lr.iter().copied());
        let nll = n * log_inv_c + 0.5 * quad;
        if !nll.is_finite() {
            return Err(Error::NonFinite(format!("LAND objective at mean {mean:?}")));
        }
        Ok(nll)
    }
}

impl Problem for LandProblem<'_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        let (mean, precision) = self.split(x);
        let nll = self.nll_at(mean, &precision)?;
        self.warm = Some(self.cached().coeffs.clone());
        Ok(nll)
    }

    fn gradient(&mut self, x: &[f64], _value: f64) -> Result<Vec<f64>> {
        let d = self.metric.dim();
        let (mean, precision) = self.split(x);
        let mut grad = Vec::with_capacity(x.len());
        let h = self.cfg.fd_step;
        self.state(mean)?;
        let base = self.cache.take();
        for k in 0..d {
            let mut up = mean.to_vec();
            let mut down = mean.to_vec();
            up[k] += h;
            down[k] -= h;
            let fp = self.nll_at(&up, &precision)?;
            let fm = self.nll_at(&down, &precision)?;
            grad.push((fp - fm) / (2.0 * h));
        }
        self.cache = base;

        // ∂NLL/∂Γ = ½ Σ_i v_i v_iᵀ − (n/2)(Γ⁻¹ + Σ_s (ρ_s − π_s) v_s v_sᵀ)
        let lr = self.log_weights(&precision);
        self.state(mean)?;
        let state = self.cached();
        let n = self.points.len() as f64;
        let la = log_sum_exp(lr.iter().zip(&state.volumes).map(|(l, m)| l + m.ln()));
        let lb = log_sum_exp(lr.iter().copied());
        let mut g = DMatrix::zeros(d, d);
        for v in &state.logs {
            g += 0.5 * v * v.transpose();
        }
        let inv = precision.clone().cholesky().ok_or_else(|| Error::NonFinite("precision lost definiteness".into()))?.inverse();
        let mut sigma = inv;
        for ((v, l), m) in self.tangents.iter().zip(&lr).zip(&state.volumes) {
            let rho = (l + m.ln() - la).exp();
            let pi = (l - lb).exp();
            sigma += (rho - pi) * v * v.transpose();
        }
        g -= 0.5 * n * sigma;

        let l = cholesky_factor(&x[d..], d);
        let gl = 2.0 * &g * &l;
        for i in 0..d {
            for j in 0..=i {
                grad.push(if i == j { gl[(i, i)] * l[(i, i)] } else { gl[(i, j)] });
            }
        }
        Ok(grad)
    }
}

/// Maximum-likelihood LAND fit by L-BFGS over the mean and the
/// log-Cholesky factor of the precision. `init` defaults to the Euclidean
/// mean and inverse covariance.
pub fn land_fit(
    points: &[Vec<f64>],
    metric: &dyn MetricField,
    init: Option<(Vec<f64>, DMatrix<f64>)>,
    cfg: &LandConfig,
    rng: &mut RngStream,
) -> Result<FitOutcome> {
    let d = metric.dim();
    if points.len() < d + 1 {
        return Err(Error::Config(format!("a LAND fit in {d} dimensions needs at least {} points", d + 1)));
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Shape(format!("point {p:?} in a {d}-dimensional latent space")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LAND data".into()));
    }
    let (mean, precision) = match init {
        Some((m, p)) => {
            if m.len() != d || p.nrows() != d || p.ncols() != d {
                return Err(Error::Shape("initial mean or precision has the wrong size".into()));
            }
            check_precision(&p)?;
            (m, p)
        }
        None => euclidean_init(points, cfg.ridge),
    };
    let seed = rng.next_u64();
    let mut crn = RngStream::derive(seed, u64::MAX);
    let lt = precision.clone().cholesky().expect("checked").l().transpose();
    let hld0 = half_log_det(&precision).expect("checked");
    let mut tangents = Vec::with_capacity(cfg.mc_samples);
    let mut log_proposal = Vec::with_capacity(cfg.mc_samples);
    for _ in 0..cfg.mc_samples.max(2) {
        let eps = DVector::from_fn(d, |_, _| crn.standard_normal());
        tangents.push(lt.solve_upper_triangular(&eps).expect("triangular factor is nonsingular"));
        log_proposal.push(hld0 - 0.5 * eps.norm_squared());
    }
    let mut problem = LandProblem {
        metric,
        points,
        cfg: *cfg,
        seed,
        tangents,
        log_proposal,
        cache: None,
        warm: None,
    };
    let mut x0 = mean;
    x0.extend(log_cholesky(&precision));
    let settings = optim::Settings {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol * points.len() as f64,
        history: 8,
        initial_step: 0.1,
    };
    let outcome = optim::minimize(&mut problem, x0, &settings)?;
    let (mean, precision) = problem.split(&outcome.x);
    let (mean, precision) = (mean.to_vec(), crate::metric::symmetrize(precision));
    let norm = land_normalizer(
        &mean,
        &precision,
        metric,
        &mut RngStream::derive(seed, u64::MAX - 1),
        cfg.mc_samples,
        cfg.rk4_steps,
    )?;
    Ok(FitOutcome {
        model: LandModel {
            mean,
            precision,
            norm_const: norm.value,
            norm_const_se: norm.std_error,
            mc_samples: cfg.mc_samples,
            seed,
        },
        nll_history: outcome.values,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Euclidean sample mean and inverse of the (ridged) sample covariance.
pub fn euclidean_init(points: &[Vec<f64>], ridge: f64) -> (Vec<f64>, DMatrix<f64>) {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::identity(d, d) * ridge;
    for p in points {
        let c = DVector::from_iterator(d, p.iter().zip(&mean).map(|(a, b)| a - b));
        cov += &c * c.transpose() / n;
    }
    let precision = crate::metric::symmetrize(cov.cholesky().expect("ridged covariance is positive definite").inverse());
    (mean, precision)
}
