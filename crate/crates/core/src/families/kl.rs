use serde::{Deserialize, Serialize};

use super::eval::{McEstimate, Prepared};
use super::{FamilyKind, ParamPoint};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{
    digamma, ln_beta, ln_gamma, trigamma, vmf_log_normalizer, vmf_mean_length, vmf_mean_length_derivative,
};

/// How KL divergences are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KlMode {
    ClosedForm,
    /// Sampled estimate from `samples` draws of the first argument. The
    /// random stream is derived from `seed` and a caller-chosen stream id so
    /// repeated evaluations see common random numbers.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for KlMode {
    fn default() -> Self {
        KlMode::ClosedForm
    }
}

fn same_family(p: &ParamPoint, q: &ParamPoint) -> Result<FamilyKind> {
    if p.family() != q.family() {
        return Err(Error::FamilyMismatch(p.family(), q.family()));
    }
    Ok(p.family())
}

/// Closed-form KL(p ‖ q).
pub fn kl(p: &ParamPoint, q: &ParamPoint) -> Result<f64> {
    let family = same_family(p, q)?;
    let a = p.guarded_values();
    let b = q.guarded_values();
    let value = match family {
        FamilyKind::Normal => {
            let d = a[0] - b[0];
            0.5 * ((b[1] / a[1]).ln() + (a[1] + d * d) / b[1] - 1.0)
        }
        FamilyKind::Bernoulli => {
            let (s, t) = (a[0], b[0]);
            s * (s / t).ln() + (1.0 - s) * ((1.0 - s) / (1.0 - t)).ln()
        }
        FamilyKind::Categorical(_) => a.iter().zip(&b).map(|(s, t)| s * (s / t).ln()).sum(),
        FamilyKind::Gamma => {
            let (a1, b1, a2, b2) = (a[0], a[1], b[0], b[1]);
            (a1 - a2) * digamma(a1) - ln_gamma(a1) + ln_gamma(a2) + a2 * (b1 / b2).ln()
                + a1 * (b2 - b1) / b1
        }
        FamilyKind::Beta => {
            let (a1, b1, a2, b2) = (a[0], a[1], b[0], b[1]);
            ln_beta(a2, b2) - ln_beta(a1, b1)
                + (a1 - a2) * digamma(a1)
                + (b1 - b2) * digamma(b1)
                + (a2 - a1 + b2 - b1) * digamma(a1 + b1)
        }
        FamilyKind::Exponential => (a[0] / b[0]).ln() + b[0] / a[0] - 1.0,
        FamilyKind::Dirichlet(_) => {
            let s1: f64 = a.iter().sum();
            let s2: f64 = b.iter().sum();
            let dg1 = digamma(s1);
            ln_gamma(s1) - ln_gamma(s2)
                + a.iter()
                    .zip(&b)
                    .map(|(x, y)| ln_gamma(*y) - ln_gamma(*x) + (x - y) * (digamma(*x) - dg1))
                    .sum::<f64>()
        }
        FamilyKind::VonMisesFisherS2 => {
            // log C₃(κ₁) − log C₃(κ₂) + (κ₁μ₁ − κ₂μ₂)ᵀ K(κ₁) μ₁
            let (k1, k2) = (a[3], b[3]);
            let mean_len = vmf_mean_length(k1);
            let proj: f64 = (0..3).map(|i| (k1 * a[i] - k2 * b[i]) * a[i]).sum();
            vmf_log_normalizer(k1) - vmf_log_normalizer(k2) + mean_len * proj
        }
    };
    Ok(value)
}

/// Sampled KL(p ‖ q) = mean of log p(xᵢ) − log q(xᵢ), xᵢ ~ p.
pub fn kl_monte_carlo(p: &ParamPoint, q: &ParamPoint, rng: &mut RngStream, n: usize) -> Result<McEstimate> {
    let family = same_family(p, q)?;
    if n == 0 {
        return Err(Error::invalid(family, "Monte-Carlo KL needs at least one sample"));
    }
    let sampler = Prepared::for_sampling(p);
    let lp = Prepared::new(p);
    let lq = Prepared::new(q);
    let mut x = vec![0.0; family.obs_dim()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        sampler.draw(rng, &mut x);
        let d = lp.log_pdf_unchecked(&x) - lq.log_pdf_unchecked(&x);
        sum += d;
        sum_sq += d * d;
    }
    Ok(McEstimate::from_moments(sum, sum_sq, n))
}

/// KL under `mode`; `stream` selects the common-random-number stream for
/// Monte-Carlo evaluation and is ignored for closed forms.
pub fn kl_under(p: &ParamPoint, q: &ParamPoint, mode: &KlMode, stream: u64) -> Result<f64> {
    match *mode {
        KlMode::ClosedForm => kl(p, q),
        KlMode::MonteCarlo { samples, seed } => {
            let mut rng = RngStream::derive(seed, stream);
            Ok(kl_monte_carlo(p, q, &mut rng, samples)?.mean)
        }
    }
}

/// Partial derivatives of the closed-form KL(p ‖ q) with respect to the
/// values of `p` and of `q`.
pub fn kl_gradients(p: &ParamPoint, q: &ParamPoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let family = same_family(p, q)?;
    let a = p.guarded_values();
    let b = q.guarded_values();
    let grads = match family {
        FamilyKind::Normal => {
            let d = a[0] - b[0];
            (
                vec![d / b[1], 0.5 * (1.0 / b[1] - 1.0 / a[1])],
                vec![-d / b[1], 0.5 * (1.0 / b[1] - (a[1] + d * d) / (b[1] * b[1]))],
            )
        }
        FamilyKind::Bernoulli => {
            let (s, t) = (a[0], b[0]);
            (
                vec![(s / t).ln() - ((1.0 - s) / (1.0 - t)).ln()],
                vec![-s / t + (1.0 - s) / (1.0 - t)],
            )
        }
        FamilyKind::Categorical(_) => (
            a.iter().zip(&b).map(|(s, t)| (s / t).ln() + 1.0).collect(),
            a.iter().zip(&b).map(|(s, t)| -s / t).collect(),
        ),
        FamilyKind::Gamma => {
            let (a1, b1, a2, b2) = (a[0], a[1], b[0], b[1]);
            (
                vec![(a1 - a2) * trigamma(a1) + (b2 - b1) / b1, a2 / b1 - a1 * b2 / (b1 * b1)],
                vec![digamma(a2) - digamma(a1) + (b1 / b2).ln(), a1 / b1 - a2 / b2],
            )
        }
        FamilyKind::Beta => {
            let (a1, b1, a2, b2) = (a[0], a[1], b[0], b[1]);
            let s1 = a1 + b1;
            let t1 = trigamma(s1);
            let w = a2 - a1 + b2 - b1;
            let dg_s1 = digamma(s1);
            let dg_s2 = digamma(a2 + b2);
            (
                vec![(a1 - a2) * trigamma(a1) + w * t1, (b1 - b2) * trigamma(b1) + w * t1],
                vec![
                    digamma(a2) - dg_s2 - digamma(a1) + dg_s1,
                    digamma(b2) - dg_s2 - digamma(b1) + dg_s1,
                ],
            )
        }
        FamilyKind::Exponential => {
            let (l1, l2) = (a[0], b[0]);
            (vec![1.0 / l1 - l2 / (l1 * l1)], vec![1.0 / l1 - 1.0 / l2])
        }
        FamilyKind::Dirichlet(_) => {
            let s1: f64 = a.iter().sum();
            let s2: f64 = b.iter().sum();
            let (dg1, dg2, t1) = (digamma(s1), digamma(s2), trigamma(s1));
            (
                a.iter().zip(&b).map(|(x, y)| (x - y) * trigamma(*x) - (s1 - s2) * t1).collect(),
                a.iter().zip(&b).map(|(x, y)| digamma(*y) - dg2 - digamma(*x) + dg1).collect(),
            )
        }
        FamilyKind::VonMisesFisherS2 => {
            let (k1, k2) = (a[3], b[3]);
            let m1 = vmf_mean_length(k1);
            let dm1 = vmf_mean_length_derivative(k1);
            let nn: f64 = (0..3).map(|i| a[i] * a[i]).sum();
            let dot: f64 = (0..3).map(|i| a[i] * b[i]).sum();
            let mut gp = vec![0.0; 4];
            let mut gq = vec![0.0; 4];
            for i in 0..3 {
                gp[i] = m1 * (2.0 * k1 * a[i] - k2 * b[i]);
                gq[i] = -m1 * k2 * a[i];
            }
            // d log C₃ / dκ = −K(κ)
            gp[3] = -m1 + dm1 * (k1 * nn - k2 * dot) + m1 * nn;
            gq[3] = vmf_mean_length(k2) - m1 * dot;
            (gp, gq)
        }
    };
    Ok(grads)
}
