use nalgebra::DMatrix;

use super::eval::Prepared;
use super::{FamilyKind, ParamPoint};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{trigamma, vmf_mean_length};

/// Closed-form Fisher-Rao information tensor I(η) = E[g gᵀ] in the
/// coordinates documented on [`super`].
pub fn fisher_rao(p: &ParamPoint) -> Result<DMatrix<f64>> {
    let v = p.guarded_values();
    let m = match p.family() {
        FamilyKind::Normal => {
            let var = v[1];
            DMatrix::from_row_slice(2, 2, &[1.0 / var, 0.0, 0.0, 0.5 / (var * var)])
        }
        FamilyKind::Bernoulli => DMatrix::from_element(1, 1, 1.0 / (v[0] * (1.0 - v[0]))),
        FamilyKind::Categorical(k) => {
            DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 / v[i] } else { 0.0 })
        }
        FamilyKind::Gamma => {
            let (a, b) = (v[0], v[1]);
            DMatrix::from_row_slice(2, 2, &[trigamma(a), -1.0 / b, -1.0 / b, a / (b * b)])
        }
        FamilyKind::Beta => {
            let (a, b) = (v[0], v[1]);
            let s = trigamma(a + b);
            DMatrix::from_row_slice(2, 2, &[trigamma(a) - s, -s, -s, trigamma(b) - s])
        }
        FamilyKind::Exponential => DMatrix::from_element(1, 1, 1.0 / (v[0] * v[0])),
        FamilyKind::Dirichlet(k) => {
            let s = trigamma(v.iter().sum());
            DMatrix::from_fn(k, k, |i, j| if i == j { trigamma(v[i]) - s } else { -s })
        }
        FamilyKind::VonMisesFisherS2 => vmf_fisher(&v),
    };
    Ok(m)
}

/// Second moment of the vMF score (κx, μᵀx − K) using
/// E[x] = Kμ and E[xxᵀ] = (1 − 3K/κ) μμᵀ + (K/κ) I.
fn vmf_fisher(v: &[f64]) -> DMatrix<f64> {
    let mu = [v[0], v[1], v[2]];
    let kappa = v[3];
    let k = vmf_mean_length(kappa);
    // E[(μᵀx − K)²] = Var(μᵀx)
    let kk = 1.0 - 2.0 * k / kappa - k * k;
    let cross = kappa * kk;
    let mut m = DMatrix::zeros(4, 4);
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = kappa * k * (delta - 3.0 * mu[i] * mu[j]) + kappa * kappa * mu[i] * mu[j];
        }
        m[(i, 3)] = cross * mu[i];
        m[(3, i)] = cross * mu[i];
    }
    m[(3, 3)] = kk;
    m
}

/// Monte-Carlo estimate (1/n) Σ g(η, xᵢ) g(η, xᵢ)ᵀ with xᵢ ~ p(· | η).
pub fn mc_fisher_rao(p: &ParamPoint, rng: &mut RngStream, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid(p.family(), "Monte-Carlo Fisher estimate needs n >= 1"));
    }
    let sampler = Prepared::for_sampling(p);
    let scorer = Prepared::new(p);
    let dim = p.family().param_dim();
    let mut x = vec![0.0; p.family().obs_dim()];
    let mut g = vec![0.0; dim];
    let mut acc = vec![0.0; dim * dim];
    for _ in 0..n {
        sampler.draw(rng, &mut x);
        scorer.score_unchecked(&x, &mut g);
        for i in 0..dim {
            let gi = g[i];
            for j in i..dim {
                acc[i * dim + j] += gi * g[j];
            }
        }
    }
    let nf = n as f64;
    Ok(DMatrix::from_fn(dim, dim, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        acc[a * dim + b] / nf
    }))
}
