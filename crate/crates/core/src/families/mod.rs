//! Likelihood families: densities, samplers, KL divergences and Fisher-Rao
//! tensors over each family's natural parameter coordinates.
//!
//! Parameter layouts (`ParamPoint::values`):
//!
//! | family        | values                        |
//! |---------------|-------------------------------|
//! | Normal        | `[mean, variance]`            |
//! | Bernoulli     | `[theta]`                     |
//! | Categorical K | `[theta_1 .. theta_K]`        |
//! | Gamma         | `[shape alpha, rate beta]`    |
//! | Beta          | `[alpha, beta]`               |
//! | Exponential   | `[rate lambda]`               |
//! | Dirichlet K   | `[alpha_1 .. alpha_K]`        |
//! | vMF on S²     | `[mu_x, mu_y, mu_z, kappa]`   |
//!
//! Observations are flat slices: scalars for the univariate families, a
//! one-hot vector for Categorical, a simplex point for Dirichlet and a unit
//! 3-vector for the von Mises-Fisher.

mod eval;
mod fisher;
mod kl;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{log_pdf, sample, score, McEstimate};
pub use fisher::{fisher_rao, mc_fisher_rao};
pub use kl::{kl, kl_gradients, kl_monte_carlo, kl_under, KlMode};

/// Lower clamp applied to strictly positive parameters before evaluation.
pub const POSITIVE_FLOOR: f64 = 1e-9;
/// Bernoulli probabilities are clamped to `[BERNOULLI_GUARD, 1 - BERNOULLI_GUARD]`.
pub const BERNOULLI_GUARD: f64 = 1e-7;
const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Normal,
    Bernoulli,
    Categorical(usize),
    Gamma,
    Beta,
    Exponential,
    Dirichlet(usize),
    #[serde(rename = "vmf_s2")]
    VonMisesFisherS2,
}

impl FamilyKind {
    /// Number of parameters per feature.
    pub fn param_dim(self) -> usize {
        match self {
            FamilyKind::Normal | FamilyKind::Gamma | FamilyKind::Beta => 2,
            FamilyKind::Bernoulli | FamilyKind::Exponential => 1,
            FamilyKind::Categorical(k) | FamilyKind::Dirichlet(k) => k,
            FamilyKind::VonMisesFisherS2 => 4,
        }
    }

    /// Length of one observation vector.
    pub fn obs_dim(self) -> usize {
        match self {
            FamilyKind::Categorical(k) | FamilyKind::Dirichlet(k) => k,
            FamilyKind::VonMisesFisherS2 => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Normal => "normal",
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Categorical(_) => "categorical",
            FamilyKind::Gamma => "gamma",
            FamilyKind::Beta => "beta",
            FamilyKind::Exponential => "exponential",
            FamilyKind::Dirichlet(_) => "dirichlet",
            FamilyKind::VonMisesFisherS2 => "vmf_s2",
        }
    }

    /// Projector onto parameter directions that keep the family's constraint
    /// (sum-to-one for Categorical, unit mean direction for vMF). Identity for
    /// unconstrained families.
    pub fn constraint_tangent(self, point: &ParamPoint) -> DMatrix<f64> {
        let p = self.param_dim();
        match self {
            FamilyKind::Categorical(k) => {
                DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64)
            }
            FamilyKind::VonMisesFisherS2 => {
                let mu = &point.values[..3];
                let mut t = DMatrix::identity(4, 4);
                for i in 0..3 {
                    for j in 0..3 {
                        t[(i, j)] -= mu[i] * mu[j];
                    }
                }
                t
            }
            _ => DMatrix::identity(p, p),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::Categorical(k) | FamilyKind::Dirichlet(k) => write!(f, "{}({k})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// A point in a family's parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    family: FamilyKind,
    values: Vec<f64>,
}

impl ParamPoint {
    /// Validates the family's invariants. Categorical probabilities are
    /// renormalized onto the simplex.
    pub fn new(family: FamilyKind, values: Vec<f64>) -> Result<Self> {
        let mut values = values;
        check_len_finite(family, &values)?;
        let positive = |v: &[f64], what: &str| -> Result<()> {
            match v.iter().find(|x| **x <= 0.0) {
                Some(x) => Err(Error::invalid(family, format!("{what} must be > 0, got {x}"))),
                None => Ok(()),
            }
        };
        match family {
            FamilyKind::Normal => positive(&values[1..], "variance")?,
            FamilyKind::Bernoulli => {
                let t = values[0];
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::invalid(family, format!("theta must lie in (0, 1), got {t}")));
                }
            }
            FamilyKind::Categorical(_) => {
                positive(&values, "probabilities")?;
                let s: f64 = values.iter().sum();
                values.iter_mut().for_each(|v| *v /= s);
            }
            FamilyKind::Gamma | FamilyKind::Beta => positive(&values, "alpha and beta")?,
            FamilyKind::Exponential => positive(&values, "rate")?,
            FamilyKind::Dirichlet(_) => positive(&values, "concentrations")?,
            FamilyKind::VonMisesFisherS2 => {
                let n = norm3(&values[..3]);
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::invalid(family, format!("mean direction has norm {n}")));
                }
                positive(&values[3..], "kappa")?;
            }
        }
        Ok(Self { family, values })
    }

    /// Clamps raw values (e.g. decoder outputs) into the guarded interior of
    /// the parameter space, then validates.
    pub fn guarded(family: FamilyKind, mut values: Vec<f64>) -> Result<Self> {
        check_len_finite(family, &values)?;
        guard_in_place(family, &mut values);
        Self::new(family, values)
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        Self::new(FamilyKind::Normal, vec![mean, variance])
    }

    pub fn bernoulli(theta: f64) -> Result<Self> {
        Self::new(FamilyKind::Bernoulli, vec![theta])
    }

    pub fn categorical(probs: &[f64]) -> Result<Self> {
        Self::new(FamilyKind::Categorical(probs.len()), probs.to_vec())
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(FamilyKind::Gamma, vec![shape, rate])
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(FamilyKind::Beta, vec![alpha, beta])
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(FamilyKind::Exponential, vec![rate])
    }

    pub fn dirichlet(alphas: &[f64]) -> Result<Self> {
        Self::new(FamilyKind::Dirichlet(alphas.len()), alphas.to_vec())
    }

    pub fn vmf(mean_direction: [f64; 3], kappa: f64) -> Result<Self> {
        let [x, y, z] = mean_direction;
        Self::new(FamilyKind::VonMisesFisherS2, vec![x, y, z, kappa])
    }

    /// Values with the numerical guards applied.
    pub(crate) fn guarded_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        guard_in_place(self.family, &mut v);
        v
    }
}

fn check_len_finite(family: FamilyKind, values: &[f64]) -> Result<()> {
    if values.len() != family.param_dim() {
        return Err(Error::invalid(
            family,
            format!("expected {} values, got {}", family.param_dim(), values.len()),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(family, format!("non-finite value {v}")));
    }
    Ok(())
}

fn guard_in_place(family: FamilyKind, v: &mut [f64]) {
    let floor = |x: &mut f64| *x = x.max(POSITIVE_FLOOR);
    match family {
        FamilyKind::Normal => floor(&mut v[1]),
        FamilyKind::Bernoulli => v[0] = v[0].clamp(BERNOULLI_GUARD, 1.0 - BERNOULLI_GUARD),
        FamilyKind::Categorical(_) => {
            v.iter_mut().for_each(floor);
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
        }
        FamilyKind::Gamma | FamilyKind::Beta | FamilyKind::Exponential | FamilyKind::Dirichlet(_) => {
            v.iter_mut().for_each(floor)
        }
        FamilyKind::VonMisesFisherS2 => {
            let n = norm3(&v[..3]);
            if n > 0.0 {
                v[..3].iter_mut().for_each(|x| *x /= n);
            }
            floor(&mut v[3]);
        }
    }
}

pub(crate) fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Targets for the maximum-uncertainty parameters of families whose
/// maximum-entropy limit lies on the boundary of the parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Extrapolation {
    /// Normal variance used in place of σ → ∞.
    pub normal_variance_max: f64,
    /// Exponential rate used in place of λ → 0.
    pub exponential_rate_min: f64,
    /// vMF concentration used in place of κ → 0.
    pub vmf_kappa_min: f64,
    /// Gamma rate (with unit shape) used in place of β → 0.
    pub gamma_rate_min: f64,
}

impl Default for Extrapolation {
    fn default() -> Self {
        Self {
            normal_variance_max: 1e3,
            exponential_rate_min: 1e-3,
            vmf_kappa_min: 1e-3,
            gamma_rate_min: 1e-3,
        }
    }
}

/// Parameters of maximal uncertainty for one feature of `family`.
pub fn max_uncertainty_params(family: FamilyKind, cfg: &Extrapolation) -> ParamPoint {
    let values = match family {
        FamilyKind::Normal => vec![0.0, cfg.normal_variance_max],
        FamilyKind::Bernoulli => vec![0.5],
        FamilyKind::Categorical(k) => vec![1.0 / k as f64; k],
        FamilyKind::Gamma => vec![1.0, cfg.gamma_rate_min],
        FamilyKind::Beta => vec![1.0, 1.0],
        FamilyKind::Exponential => vec![cfg.exponential_rate_min],
        FamilyKind::Dirichlet(k) => vec![1.0; k],
        FamilyKind::VonMisesFisherS2 => vec![0.0, 0.0, 1.0, cfg.vmf_kappa_min],
    };
    ParamPoint::new(family, values).expect("extrapolation targets are valid parameters")
}
