use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kmeans_fit, Activation, DecoderMap, Head, Layer, UncertaintyReg};
use crate::error::{Error, Result};
use crate::families::FamilyKind;
use crate::rng::RngStream;

/// Untrained decoders from 2-D latent codes used for the noisy-circle
/// experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFamily {
    Normal,
    Bernoulli,
    Beta,
    Dirichlet,
    Exponential,
}

impl ToyFamily {
    pub const ALL: [ToyFamily; 5] = [
        ToyFamily::Normal,
        ToyFamily::Bernoulli,
        ToyFamily::Beta,
        ToyFamily::Dirichlet,
        ToyFamily::Exponential,
    ];

    pub fn seed(self) -> u64 {
        match self {
            ToyFamily::Normal | ToyFamily::Bernoulli | ToyFamily::Beta => 1,
            ToyFamily::Dirichlet | ToyFamily::Exponential => 17,
        }
    }

    /// β of the translated sigmoid.
    pub fn beta(self) -> f64 {
        match self {
            ToyFamily::Normal => -2.5,
            ToyFamily::Bernoulli => -3.5,
            ToyFamily::Beta | ToyFamily::Dirichlet | ToyFamily::Exponential => -4.0,
        }
    }

    pub fn family(self) -> FamilyKind {
        match self {
            ToyFamily::Normal => FamilyKind::Normal,
            ToyFamily::Bernoulli => FamilyKind::Bernoulli,
            ToyFamily::Beta => FamilyKind::Beta,
            ToyFamily::Dirichlet => FamilyKind::Dirichlet(3),
            ToyFamily::Exponential => FamilyKind::Exponential,
        }
    }

    pub fn feature_count(self) -> usize {
        match self {
            ToyFamily::Bernoulli => 15,
            ToyFamily::Dirichlet => 1,
            _ => 3,
        }
    }

    /// The unregularized decoder with weights drawn from the family's seed.
    pub fn network(self) -> DecoderMap {
        let mut rng = RngStream::new(self.seed());
        let softplus_x10 = |rng: &mut RngStream| {
            vec![Layer::random(2, 3, Activation::Softplus, rng), Layer::pointwise(3, Activation::Scale(10.0))]
        };
        let heads = match self {
            ToyFamily::Normal => vec![
                Head::new("mu", vec![Layer::random(2, 3, Activation::Scale(10.0), &mut rng)]),
                // σ = 10·Softplus(f), stored as the variance σ²
                Head::new("var", {
                    let mut layers = softplus_x10(&mut rng);
                    layers.push(Layer::pointwise(3, Activation::Square));
                    layers
                }),
            ],
            ToyFamily::Bernoulli => vec![Head::new("p", vec![Layer::random(2, 15, Activation::Sigmoid, &mut rng)])],
            ToyFamily::Beta => vec![Head::new("alpha", softplus_x10(&mut rng)), Head::new("beta", softplus_x10(&mut rng))],
            ToyFamily::Dirichlet => vec![Head::new("alpha", vec![Layer::random(2, 3, Activation::Softplus, &mut rng)])],
            ToyFamily::Exponential => vec![Head::new("rate", vec![Layer::random(2, 3, Activation::Softplus, &mut rng)])],
        };
        let heads = heads.into_iter().collect::<Result<Vec<_>>>().expect("toy heads are well formed");
        DecoderMap::new(2, self.feature_count(), self.family(), heads).expect("toy decoder is well formed")
    }
}

impl fmt::Display for ToyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ToyFamily::Normal => "normal",
            ToyFamily::Bernoulli => "bernoulli",
            ToyFamily::Beta => "beta",
            ToyFamily::Dirichlet => "dirichlet",
            ToyFamily::Exponential => "exponential",
        };
        f.write_str(s)
    }
}

impl FromStr for ToyFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyFamily::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown toy family '{s}'")))
    }
}

/// `n` points `[cos θ, sin θ] + noise·ε` with θ ~ U[0, 2π) and ε ~ N(0, I).
pub fn toy_circle_codes(n: usize, noise: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let (s, c) = theta.sin_cos();
            vec![c + noise * rng.standard_normal(), s + noise * rng.standard_normal()]
        })
        .collect()
}

/// Toy decoder regularized with `k` k-means centers fitted to `codes`.
pub fn toy_decoder(family: ToyFamily, codes: &[Vec<f64>], k: usize) -> Result<DecoderMap> {
    let mut rng = RngStream::derive(family.seed(), 1);
    let fit = kmeans_fit(codes, k, &mut rng, 100)?;
    family.network().with_regularization(UncertaintyReg::new(fit.centers, family.beta())?)
}
