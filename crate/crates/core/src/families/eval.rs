use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist};

use super::{norm3, FamilyKind, ParamPoint};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{digamma, ln_beta, ln_gamma, vmf_log_normalizer, vmf_mean_length};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub(crate) fn from_moments(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / nf).sqrt(),
        }
    }
}

/// Per-parameter constants hoisted out of the per-sample loops.
pub(crate) struct Prepared {
    family: FamilyKind,
    v: Vec<f64>,
    c0: f64,
    c1: f64,
    c2: f64,
    basis: Option<[[f64; 3]; 2]>,
    digammas: Vec<f64>,
}

impl Prepared {
    /// Evaluation constants for guarded parameters.
    pub(crate) fn new(p: &ParamPoint) -> Self {
        Self::from_values(p.family(), p.guarded_values())
    }

    /// Sampling constants for the raw (unguarded) parameters.
    pub(crate) fn for_sampling(p: &ParamPoint) -> Self {
        Self::from_values(p.family(), p.values().to_vec())
    }

    fn from_values(family: FamilyKind, v: Vec<f64>) -> Self {
        let (mut c0, mut c1, mut c2) = (0.0, 0.0, 0.0);
        let mut basis = None;
        let mut digammas = Vec::new();
        match family {
            FamilyKind::Normal => c0 = -0.5 * (LN_2PI + v[1].ln()),
            FamilyKind::Bernoulli => {
                c0 = v[0].ln();
                c1 = (-v[0]).ln_1p();
            }
            FamilyKind::Gamma => {
                c0 = v[0] * v[1].ln() - ln_gamma(v[0]);
                c1 = v[1].ln() - digamma(v[0]);
            }
            FamilyKind::Beta => {
                c0 = -ln_beta(v[0], v[1]);
                let s = digamma(v[0] + v[1]);
                c1 = s - digamma(v[0]);
                c2 = s - digamma(v[1]);
            }
            FamilyKind::Exponential => c0 = v[0].ln(),
            FamilyKind::Dirichlet(_) => {
                let total: f64 = v.iter().sum();
                c0 = ln_gamma(total) - v.iter().map(|a| ln_gamma(*a)).sum::<f64>();
                c1 = digamma(total);
                digammas = v.iter().map(|a| digamma(*a)).collect();
            }
            FamilyKind::VonMisesFisherS2 => {
                c0 = vmf_log_normalizer(v[3]);
                c1 = vmf_mean_length(v[3]);
                basis = Some(orthonormal_complement([v[0], v[1], v[2]]));
            }
            FamilyKind::Categorical(_) => {}
        }
        Self {
            family,
            v,
            c0,
            c1,
            c2,
            basis,
            digammas,
        }
    }

    pub(crate) fn check_support(&self, x: &[f64]) -> Result<()> {
        let family = self.family;
        if x.len() != family.obs_dim() {
            return Err(Error::domain(
                family,
                format!("observation has length {}, expected {}", x.len(), family.obs_dim()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(family, "non-finite observation"));
        }
        let bad = |detail: &str| Err(Error::domain(family, format!("{detail}: {x:?}")));
        match family {
            FamilyKind::Normal => Ok(()),
            FamilyKind::Bernoulli if x[0] != 0.0 && x[0] != 1.0 => bad("expected 0 or 1"),
            FamilyKind::Categorical(_) => {
                let ones = x.iter().filter(|v| **v == 1.0).count();
                let zeros = x.iter().filter(|v| **v == 0.0).count();
                if ones == 1 && zeros == x.len() - 1 {
                    Ok(())
                } else {
                    bad("expected a one-hot vector")
                }
            }
            FamilyKind::Gamma if x[0] <= 0.0 => bad("expected x > 0"),
            FamilyKind::Exponential if x[0] < 0.0 => bad("expected x >= 0"),
            FamilyKind::Beta if !(x[0] > 0.0 && x[0] < 1.0) => bad("expected x in (0, 1)"),
            FamilyKind::Dirichlet(k) => {
                let s: f64 = x.iter().sum();
                if x.iter().any(|v| *v <= 0.0) || (s - 1.0).abs() > 1e-8 * k as f64 {
                    bad("expected a point of the open simplex")
                } else {
                    Ok(())
                }
            }
            FamilyKind::VonMisesFisherS2 if (norm3(x) - 1.0).abs() > 1e-8 => bad("expected a unit vector"),
            _ => Ok(()),
        }
    }

    /// log p(x | η); `x` must already be in the support.
    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let v = &self.v;
        match self.family {
            FamilyKind::Normal => {
                let d = x[0] - v[0];
                self.c0 - 0.5 * d * d / v[1]
            }
            FamilyKind::Bernoulli => x[0] * self.c0 + (1.0 - x[0]) * self.c1,
            FamilyKind::Categorical(_) => {
                x.iter().zip(v).filter(|(xi, _)| **xi == 1.0).map(|(_, t)| t.ln()).sum()
            }
            FamilyKind::Gamma => self.c0 + (v[0] - 1.0) * x[0].ln() - v[1] * x[0],
            FamilyKind::Beta => self.c0 + (v[0] - 1.0) * x[0].ln() + (v[1] - 1.0) * (-x[0]).ln_1p(),
            FamilyKind::Exponential => self.c0 - v[0] * x[0],
            FamilyKind::Dirichlet(_) => {
                self.c0 + x.iter().zip(v).map(|(xi, a)| (a - 1.0) * xi.ln()).sum::<f64>()
            }
            FamilyKind::VonMisesFisherS2 => {
                self.c0 + v[3] * (v[0] * x[0] + v[1] * x[1] + v[2] * x[2])
            }
        }
    }

    /// Score ∇_η log p(x | η) written into `out` (length `param_dim`).
    ///
    /// For the vMF the mean direction is treated as a free vector in R³, so the
    /// score is (κx, μᵀx − K(κ)).
    pub(crate) fn score_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let v = &self.v;
        match self.family {
            FamilyKind::Normal => {
                let d = x[0] - v[0];
                out[0] = d / v[1];
                out[1] = -0.5 / v[1] + 0.5 * d * d / (v[1] * v[1]);
            }
            FamilyKind::Bernoulli => out[0] = x[0] / v[0] - (1.0 - x[0]) / (1.0 - v[0]),
            FamilyKind::Categorical(_) => {
                for ((o, xi), t) in out.iter_mut().zip(x).zip(v) {
                    *o = xi / t;
                }
            }
            FamilyKind::Gamma => {
                out[0] = self.c1 + x[0].ln();
                out[1] = v[0] / v[1] - x[0];
            }
            FamilyKind::Beta => {
                out[0] = x[0].ln() + self.c1;
                out[1] = (-x[0]).ln_1p() + self.c2;
            }
            FamilyKind::Exponential => out[0] = 1.0 / v[0] - x[0],
            FamilyKind::Dirichlet(_) => {
                for ((o, xi), dg) in out.iter_mut().zip(x).zip(&self.digammas) {
                    *o = self.c1 - dg + xi.ln();
                }
            }
            FamilyKind::VonMisesFisherS2 => {
                let kappa = v[3];
                for i in 0..3 {
                    out[i] = kappa * x[i];
                }
                out[3] = v[0] * x[0] + v[1] * x[1] + v[2] * x[2] - self.c1;
            }
        }
    }

    /// Draws one observation into `out`.
    pub(crate) fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        let v = &self.v;
        match self.family {
            FamilyKind::Normal => out[0] = v[0] + v[1].sqrt() * rng.standard_normal(),
            FamilyKind::Bernoulli => out[0] = if rng.uniform_open() < v[0] { 1.0 } else { 0.0 },
            FamilyKind::Categorical(_) => {
                let u = rng.uniform_open();
                let mut acc = 0.0;
                let mut hot = v.len() - 1;
                for (k, t) in v.iter().enumerate() {
                    acc += t;
                    if u < acc {
                        hot = k;
                        break;
                    }
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                out[hot] = 1.0;
            }
            FamilyKind::Gamma => {
                let g = GammaDist::new(v[0], 1.0 / v[1]).expect("validated gamma parameters");
                out[0] = g.sample(rng).max(f64::MIN_POSITIVE);
            }
            FamilyKind::Beta => {
                let b = BetaDist::new(v[0], v[1]).expect("validated beta parameters");
                out[0] = b.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            }
            FamilyKind::Exponential => out[0] = -rng.uniform_open().ln() / v[0],
            FamilyKind::Dirichlet(_) => {
                let mut total = 0.0;
                for (o, a) in out.iter_mut().zip(v) {
                    let g = GammaDist::new(*a, 1.0).expect("validated dirichlet parameters");
                    *o = g.sample(rng).max(f64::MIN_POSITIVE);
                    total += *o;
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
            FamilyKind::VonMisesFisherS2 => {
                let kappa = v[3];
                // inverse CDF of the axial cosine w on S²
                let u = rng.uniform_open();
                let w = (1.0 + ((1.0 - u) * (-2.0 * kappa).exp_m1()).ln_1p() / kappa).clamp(-1.0, 1.0);
                let phi = 2.0 * std::f64::consts::PI * rng.uniform_open();
                let r = (1.0 - w * w).max(0.0).sqrt();
                let [e1, e2] = self.basis.expect("vmf basis prepared");
                let (s, c) = phi.sin_cos();
                for i in 0..3 {
                    out[i] = w * v[i] + r * (c * e1[i] + s * e2[i]);
                }
                let n = norm3(out);
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
    }
}

/// Two unit vectors completing `mu` to an orthonormal basis.
fn orthonormal_complement(mu: [f64; 3]) -> [[f64; 3]; 2] {
    let n = norm3(&mu);
    let m = [mu[0] / n, mu[1] / n, mu[2] / n];
    // cross with the least aligned axis
    let axis = if m[0].abs() <= m[1].abs() && m[0].abs() <= m[2].abs() {
        [1.0, 0.0, 0.0]
    } else if m[1].abs() <= m[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let mut e1 = cross(m, axis);
    let l = norm3(&e1);
    e1.iter_mut().for_each(|x| *x /= l);
    let e2 = cross(m, e1);
    [e1, e2]
}

pub fn log_pdf(p: &ParamPoint, x: &[f64]) -> Result<f64> {
    let prep = Prepared::new(p);
    prep.check_support(x)?;
    Ok(prep.log_pdf_unchecked(x))
}

/// Score vector ∇_η log p(x | η).
pub fn score(p: &ParamPoint, x: &[f64]) -> Result<Vec<f64>> {
    let prep = Prepared::new(p);
    prep.check_support(x)?;
    let mut out = vec![0.0; p.family().param_dim()];
    prep.score_unchecked(x, &mut out);
    Ok(out)
}

/// `n` i.i.d. draws from p(· | η).
pub fn sample(p: &ParamPoint, rng: &mut RngStream, n: usize) -> Result<Vec<Vec<f64>>> {
    let prep = Prepared::for_sampling(p);
    let dim = p.family().obs_dim();
    Ok((0..n)
        .map(|_| {
            let mut x = vec![0.0; dim];
            prep.draw(rng, &mut x);
            x
        })
        .collect())
}
