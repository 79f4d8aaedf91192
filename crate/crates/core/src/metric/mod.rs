//! Riemannian metrics on the latent space.

mod grid;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::decoder::{product_fisher, Activation, DecoderMap, Head, Layer};
use crate::error::{Error, Result};
use crate::families::{kl_under, FamilyKind, KlMode, ParamPoint};

pub use grid::{grid_build, GridSpec, MetricGrid};

/// Default coordinate step of the KL-probe estimator.
pub const DEFAULT_PROBE_EPSILON: f64 = 1e-2;

/// Anything that yields a symmetric `dim × dim` tensor at latent points.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> Result<DMatrix<f64>>;

    /// M(z) and ∂M/∂z_k for every k; central differences of step `fd_step`
    /// unless the field knows its derivatives exactly.
    fn eval_with_derivatives(&self, z: &[f64], fd_step: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        Ok((self.eval(z)?, central_derivatives(self, z, fd_step)?))
    }
}

fn central_derivatives<M: MetricField + ?Sized>(metric: &M, z: &[f64], h: f64) -> Result<Vec<DMatrix<f64>>> {
    (0..z.len())
        .map(|k| {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[k] += h;
            zm[k] -= h;
            Ok((metric.eval(&zp)? - metric.eval(&zm)?) / (2.0 * h))
        })
        .collect()
}

/// A metric given by a closure.
pub struct FnMetric<F> {
    dim: usize,
    f: F,
}

impl<F> FnMetric<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> MetricField for FnMetric<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        Ok((self.f)(z))
    }
}

#[derive(Debug, Clone)]
pub enum LatentMetric {
    ExactPullback(DecoderMap),
    /// KL-probe estimate, with eigenvalues clamped to stay positive definite.
    KlProbe {
        decoder: DecoderMap,
        epsilon: f64,
        mode: KlMode,
        clamped: Arc<AtomicUsize>,
    },
    Grid(MetricGrid),
    Constant(DMatrix<f64>),
}

impl LatentMetric {
    pub fn kl_probe(decoder: DecoderMap, epsilon: f64, mode: KlMode) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(LatentMetric::KlProbe {
            decoder,
            epsilon,
            mode,
            clamped: Arc::new(AtomicUsize::new(0)),
        })
    }

    /// Number of KL-probe evaluations whose eigenvalues had to be clamped.
    pub fn clamp_count(&self) -> usize {
        match self {
            LatentMetric::KlProbe { clamped, .. } => clamped.load(Ordering::Relaxed),
            _ => 0,
        }
    }
}

impl MetricField for LatentMetric {
    fn dim(&self) -> usize {
        match self {
            LatentMetric::ExactPullback(dec) | LatentMetric::KlProbe { decoder: dec, .. } => dec.latent_dim(),
            LatentMetric::Grid(g) => g.dim(),
            LatentMetric::Constant(m) => m.nrows(),
        }
    }

    fn eval(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            LatentMetric::ExactPullback(dec) => pullback(dec, z),
            LatentMetric::KlProbe {
                decoder,
                epsilon,
                mode,
                clamped,
            } => {
                let raw = kl_probe(decoder, z, *epsilon, mode)?;
                let (m, was_clamped) = clamp_eigenvalues(raw);
                if was_clamped {
                    clamped.fetch_add(1, Ordering::Relaxed);
                }
                Ok(m)
            }
            LatentMetric::Grid(g) => g.eval(z),
            LatentMetric::Constant(m) => {
                if z.len() != m.nrows() {
                    return Err(Error::Shape(format!("point has {} entries, metric is {}-dimensional", z.len(), m.nrows())));
                }
                Ok(m.clone())
            }
        }
    }

    fn eval_with_derivatives(&self, z: &[f64], fd_step: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        match self {
            LatentMetric::Grid(g) => g.eval_with_derivatives(z, fd_step),
            LatentMetric::Constant(m) => Ok((self.eval(z)?, vec![DMatrix::zeros(m.nrows(), m.ncols()); z.len()])),
            _ => Ok((self.eval(z)?, central_derivatives(self, z, fd_step)?)),
        }
    }
}

/// Raises eigenvalues below 1e-8·trace/d to that floor.
fn clamp_eigenvalues(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = m.nrows();
    let floor = (1e-8 * m.trace().abs() / d as f64).max(f64::MIN_POSITIVE);
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|l| *l >= floor) {
        return (m, false);
    }
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&lam) * q.transpose();
    (symmetrize(out), true)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// M(z) = Jᵀ I(h(z)) J, with I the block-diagonal product Fisher-Rao tensor.
pub fn pullback(dec: &DecoderMap, z: &[f64]) -> Result<DMatrix<f64>> {
    let (flat, j) = dec.forward_with_jacobian(z)?;
    let points = dec.split(&flat)?;
    let fisher = product_fisher(&points)?;
    Ok(symmetrize(j.transpose() * fisher * j))
}

/// Σ over features of KL(p_f ‖ q_f).
pub fn kl_sum(p: &[ParamPoint], q: &[ParamPoint], mode: &KlMode, stream: u64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} features vs {}", p.len(), q.len())));
    }
    let count = p.len() as u64;
    p.iter()
        .zip(q)
        .enumerate()
        .map(|(f, (a, b))| kl_under(a, b, mode, stream * count + f as u64))
        .sum()
}

/// KL between the decoded distributions at `z1` and `z2`.
pub fn decoded_kl(dec: &DecoderMap, z1: &[f64], z2: &[f64], mode: &KlMode) -> Result<f64> {
    kl_sum(&dec.forward(z1)?, &dec.forward(z2)?, mode, 0)
}

/// Metric estimate from KL divergences along the coordinate probes ε·eᵢ and
/// ε·(eᵢ + eⱼ). The result is symmetric but may be indefinite.
pub fn kl_probe(dec: &DecoderMap, z: &[f64], epsilon: f64, mode: &KlMode) -> Result<DMatrix<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let d = dec.latent_dim();
    let base = dec.forward(z)?;
    let probe = |dirs: &[usize]| -> Result<f64> {
        let mut zp = z.to_vec();
        for &i in dirs {
            zp[i] += epsilon;
        }
        kl_sum(&base, &dec.forward(&zp)?, mode, 0)
    };
    let diag: Vec<f64> = (0..d).map(|i| probe(&[i])).collect::<Result<_>>()?;
    let e2 = epsilon * epsilon;
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = 2.0 * diag[i] / e2;
        for j in 0..i {
            let v = (probe(&[i, j])? - diag[i] - diag[j]) / e2;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Maps `K − 1` free coordinates onto the K-simplex by appending
/// `1 − Σ η_free`. Returns the point and the chart Jacobian `[I; −1ᵀ]`.
pub fn simplex_chart(eta_free: &[f64]) -> Result<(ParamPoint, DMatrix<f64>)> {
    let k = eta_free.len() + 1;
    let rest = 1.0 - eta_free.iter().sum::<f64>();
    if eta_free.iter().any(|v| !(*v > 0.0)) || !(rest > 0.0) {
        return Err(Error::OffSimplex(format!("{eta_free:?}")));
    }
    let mut values = eta_free.to_vec();
    values.push(rest);
    let point = ParamPoint::new(FamilyKind::Categorical(k), values)?;
    let mut j = DMatrix::zeros(k, k - 1);
    for i in 0..k - 1 {
        j[(i, i)] = 1.0;
        j[(k - 1, i)] = -1.0;
    }
    Ok((point, j))
}

/// Linear decoder implementing [`simplex_chart`]: the latent space is the
/// chart of the K-simplex.
pub fn simplex_chart_decoder(k: usize) -> Result<DecoderMap> {
    if k < 2 {
        return Err(Error::Shape("simplex chart needs K >= 2".into()));
    }
    let mut w = DMatrix::zeros(k, k - 1);
    for i in 0..k - 1 {
        w[(i, i)] = 1.0;
        w[(k - 1, i)] = -1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let head = Head::new("theta", vec![Layer::new(w, b, Activation::Identity)?])?;
    DecoderMap::new(k - 1, 1, FamilyKind::Categorical(k), vec![head])
}

/// ½·log det M via Cholesky; `None` if M is not positive definite.
pub fn half_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum())
}
