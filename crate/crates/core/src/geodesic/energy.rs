use nalgebra::{DMatrix, DVector};

use crate::decoder::DecoderMap;
use crate::error::{Error, Result};
use crate::families::{kl_gradients, FamilyKind, KlMode, ParamPoint, BERNOULLI_GUARD, POSITIVE_FLOOR};
use crate::metric::{kl_sum, pullback, MetricField};

/// The discretized curve energy being minimized.
///
/// For sample points z₀..z_N of a curve on [0, 1] the energy is a sum of
/// per-segment terms e_n:
///
/// * `Kl`: e_n = 2N · KL(p(·|z_n) ‖ p(·|z_{n+1})), summed over features.
/// * `Categorical`: e_n = 2N · (1 − √η_n · √η_{n+1}), the chordal form of
///   the great-circle distance between square-root embedded probabilities.
/// * `Metric`: e_n = N · Δz_nᵀ M(midpoint) Δz_n for an explicit metric field.
///
/// All three approximate ∫ ċᵀ M ċ dt for the corresponding latent metric.
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    Kl { decoder: &'a DecoderMap, mode: KlMode },
    Categorical { decoder: &'a DecoderMap },
    Metric(&'a dyn MetricField),
}

impl<'a> Objective<'a> {
    pub fn latent_dim(&self) -> usize {
        match self {
            Objective::Kl { decoder, .. } | Objective::Categorical { decoder } => decoder.latent_dim(),
            Objective::Metric(m) => m.dim(),
        }
    }

    pub(crate) fn is_stochastic(&self) -> bool {
        matches!(self, Objective::Kl { mode: KlMode::MonteCarlo { .. }, .. })
    }

    pub(crate) fn has_analytic_gradient(&self) -> bool {
        matches!(
            self,
            Objective::Kl { mode: KlMode::ClosedForm, .. } | Objective::Categorical { .. } | Objective::Metric(_)
        )
    }

    fn check(&self) -> Result<()> {
        if let Objective::Categorical { decoder } = self {
            if !matches!(decoder.family(), FamilyKind::Categorical(_)) {
                return Err(Error::FamilyMismatch(FamilyKind::Categorical(decoder.family().param_dim()), decoder.family()));
            }
        }
        Ok(())
    }

    /// The latent metric the energy discretizes.
    pub fn metric_at(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            Objective::Kl { decoder, .. } => pullback(decoder, z),
            Objective::Categorical { decoder } => Ok(pullback(decoder, z)? * 0.25),
            Objective::Metric(m) => m.eval(z),
        }
    }

    fn decode_all(decoder: &DecoderMap, points: &[Vec<f64>]) -> Result<Vec<Vec<ParamPoint>>> {
        let n = points.len() - 1;
        points
            .iter()
            .enumerate()
            .map(|(i, z)| {
                decoder.forward(z).map_err(|e| match e {
                    Error::Shape(_) => e,
                    _ => Error::NonFiniteEnergy { t: i as f64 / n as f64 },
                })
            })
            .collect()
    }

    /// Per-segment energy terms e_n; their sum is the energy.
    pub fn segment_energies(&self, points: &[Vec<f64>], crn: u64) -> Result<Vec<f64>> {
        self.check()?;
        let n = points.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::Config("a discretized curve needs at least two points".into()));
        }
        let nf = n as f64;
        let raw = match self {
            Objective::Kl { decoder, mode } => {
                let params = Self::decode_all(decoder, points)?;
                (0..n)
                    .map(|i| Ok(2.0 * nf * kl_sum(&params[i], &params[i + 1], mode, (crn << 32) + i as u64)?))
                    .collect::<Result<Vec<_>>>()?
            }
            Objective::Categorical { decoder } => {
                let params = Self::decode_all(decoder, points)?;
                (0..n)
                    .map(|i| 2.0 * nf * sqrt_overlap_gap(&params[i], &params[i + 1]))
                    .collect()
            }
            Objective::Metric(m) => (0..n)
                .map(|i| {
                    let (a, b) = (&points[i], &points[i + 1]);
                    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
                    let dz = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| y - x));
                    let metric = m.eval(&mid).map_err(|_| Error::NonFiniteEnergy { t: (i as f64 + 0.5) / nf })?;
                    Ok(nf * dz.dot(&(metric * &dz)))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if let Some(i) = raw.iter().position(|e| !e.is_finite()) {
            return Err(Error::NonFiniteEnergy { t: i as f64 / nf });
        }
        Ok(raw)
    }

    pub fn energy(&self, points: &[Vec<f64>], crn: u64) -> Result<f64> {
        Ok(self.segment_energies(points, crn)?.iter().sum())
    }

    /// Per-segment lengths: √(e_n / N), except for the categorical energy
    /// where the exact great-circle angle arccos(√η_n · √η_{n+1}) is used.
    pub fn segment_lengths(&self, points: &[Vec<f64>], crn: u64) -> Result<Vec<f64>> {
        if let Objective::Categorical { decoder } = self {
            self.check()?;
            let params = Self::decode_all(decoder, points)?;
            return Ok(params
                .windows(2)
                .map(|w| {
                    w[0].iter()
                        .zip(&w[1])
                        .map(|(a, b)| sqrt_overlap(a, b).clamp(-1.0, 1.0).acos().powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect());
        }
        let nf = (points.len() - 1) as f64;
        Ok(self
            .segment_energies(points, crn)?
            .into_iter()
            .map(|e| (e.max(0.0) / nf).sqrt())
            .collect())
    }

    /// ∂energy/∂z_n at every sample point, for closed-form objectives.
    pub(crate) fn point_gradients(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check()?;
        let decoder = match self {
            Objective::Kl { decoder, mode: KlMode::ClosedForm } | Objective::Categorical { decoder } => *decoder,
            Objective::Metric(m) => return metric_point_gradients(*m, points),
            _ => return Err(Error::Config("analytic gradients need a closed-form objective".into())),
        };
        let n = points.len() - 1;
        let scale = 2.0 * n as f64;
        let family = decoder.family();
        let p = family.param_dim();
        let mut decoded = Vec::with_capacity(points.len());
        for (i, z) in points.iter().enumerate() {
            let (flat, j) = decoder
                .forward_with_jacobian(z)
                .map_err(|_| Error::NonFiniteEnergy { t: i as f64 / n as f64 })?;
            let params = decoder.split(&flat)?;
            decoded.push((flat, j, params));
        }
        let mut grads = vec![vec![0.0; decoder.output_dim()]; points.len()];
        for i in 0..n {
            let (a, b) = (&decoded[i].2, &decoded[i + 1].2);
            for (f, (pa, pb)) in a.iter().zip(b).enumerate() {
                let (ga, gb) = match self {
                    Objective::Kl { .. } => kl_gradients(pa, pb)?,
                    _ => (
                        pa.values().iter().zip(pb.values()).map(|(x, y)| -0.5 * (y / x).sqrt()).collect(),
                        pa.values().iter().zip(pb.values()).map(|(x, y)| -0.5 * (x / y).sqrt()).collect(),
                    ),
                };
                for k in 0..p {
                    grads[i][f * p + k] += scale * ga[k];
                    grads[i + 1][f * p + k] += scale * gb[k];
                }
            }
        }
        Ok(decoded
            .iter()
            .zip(grads)
            .map(|((flat, j, _), mut g)| {
                for (raw, gf) in flat.chunks(p).zip(g.chunks_mut(p)) {
                    chain_guard(family, raw, gf);
                }
                (j.transpose() * DVector::from_vec(g)).as_slice().to_vec()
            })
            .collect())
    }
}

/// Gradients of Σ_n N·Δz_nᵀ M(midpoint) Δz_n with respect to the points.
fn metric_point_gradients(metric: &dyn MetricField, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = points.len() - 1;
    let nf = n as f64;
    let d = points[0].len();
    let mut grads = vec![vec![0.0; d]; points.len()];
    for i in 0..n {
        let (a, b) = (&points[i], &points[i + 1]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let dz = DVector::from_iterator(d, a.iter().zip(b).map(|(x, y)| y - x));
        let (m, derivs) = metric
            .eval_with_derivatives(&mid, super::DEFAULT_FD_STEP)
            .map_err(|_| Error::NonFiniteEnergy { t: (i as f64 + 0.5) / nf })?;
        let md = m * &dz;
        for k in 0..d {
            let q = 0.5 * nf * dz.dot(&(&derivs[k] * &dz));
            grads[i][k] += q - 2.0 * nf * md[k];
            grads[i + 1][k] += q + 2.0 * nf * md[k];
        }
    }
    Ok(grads)
}

fn sqrt_overlap(a: &ParamPoint, b: &ParamPoint) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x * y).sqrt()).sum()
}

/// Σ over features of 1 − √η·√η′.
fn sqrt_overlap_gap(a: &[ParamPoint], b: &[ParamPoint]) -> f64 {
    a.iter().zip(b).map(|(x, y)| 1.0 - sqrt_overlap(x, y)).sum()
}

/// Maps a gradient with respect to guarded parameters onto the raw decoder
/// outputs `raw` they were produced from.
fn chain_guard(family: FamilyKind, raw: &[f64], g: &mut [f64]) {
    match family {
        FamilyKind::Categorical(_) => {
            let floored: Vec<f64> = raw.iter().map(|v| v.max(POSITIVE_FLOOR)).collect();
            let s: f64 = floored.iter().sum();
            let proj: f64 = g.iter().zip(&floored).map(|(gi, v)| gi * v / s).sum();
            for (gi, r) in g.iter_mut().zip(raw) {
                *gi = if *r < POSITIVE_FLOOR { 0.0 } else { (*gi - proj) / s };
            }
        }
        FamilyKind::VonMisesFisherS2 => {
            let n = crate::families::norm3(raw);
            if n > 0.0 {
                let proj: f64 = (0..3).map(|i| g[i] * raw[i] / n).sum();
                for i in 0..3 {
                    g[i] = (g[i] - proj * raw[i] / n) / n;
                }
            }
            if raw[3] < POSITIVE_FLOOR {
                g[3] = 0.0;
            }
        }
        FamilyKind::Bernoulli => {
            if !(BERNOULLI_GUARD..=1.0 - BERNOULLI_GUARD).contains(&raw[0]) {
                g[0] = 0.0;
            }
        }
        FamilyKind::Normal => {
            if raw[1] < POSITIVE_FLOOR {
                g[1] = 0.0;
            }
        }
        _ => {
            for (gi, r) in g.iter_mut().zip(raw) {
                if *r < POSITIVE_FLOOR {
                    *gi = 0.0;
                }
            }
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("discretization needs N >= 2, got {n}")));
    }
    Ok(())
}

/// 2N · Σ_n KL(p(·|c(n/N)) ‖ p(·|c((n+1)/N))) over the N consecutive pairs.
pub fn kl_energy(curve: &super::SplineCurve, decoder: &DecoderMap, n: usize, mode: &KlMode) -> Result<f64> {
    check_n(n)?;
    Objective::Kl { decoder, mode: *mode }.energy(&curve.sample_points(n), 0)
}

/// Σ_n (2 − 2·√h(c(n/N))ᵀ√h(c((n+1)/N))), summed over features.
pub fn categorical_energy(curve: &super::SplineCurve, decoder: &DecoderMap, n: usize) -> Result<f64> {
    check_n(n)?;
    let e = Objective::Categorical { decoder }.energy(&curve.sample_points(n), 0)?;
    Ok(e / n as f64)
}

/// Σ_n √(2 · KL) over consecutive decoded distributions.
pub fn curve_length(curve: &super::SplineCurve, decoder: &DecoderMap, n: usize, mode: &KlMode) -> Result<f64> {
    check_n(n)?;
    Ok(Objective::Kl { decoder, mode: *mode }
        .segment_lengths(&curve.sample_points(n), 0)?
        .iter()
        .sum())
}
