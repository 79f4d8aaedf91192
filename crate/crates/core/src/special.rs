//! Special functions used by the likelihood families.
//!
//! `digamma` and `trigamma` shift the argument upward with the recurrences
//! ψ(x) = ψ(x+1) − 1/x and ψ₁(x) = ψ₁(x+1) + 1/x², then evaluate the
//! asymptotic series. Both are only defined here for x > 0.

pub use statrs::function::gamma::ln_gamma;

const ASYMPTOTIC_FROM: f64 = 10.0;

pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma defined for x > 0 only");
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "trigamma defined for x > 0 only");
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    // Bernoulli-number series: 1/x + 1/(2x²) + Σ B₂ₖ / x^{2k+1}
    let series = (1.0
        + r * (1.0 / 6.0
            - r * (1.0 / 30.0
                - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * 7.0 / 6.0)))))))
        / x;
    acc + series + 0.5 * r
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// K(κ) = coth κ − 1/κ, the mean resultant length of the von Mises-Fisher
/// distribution on S².
pub fn vmf_mean_length(kappa: f64) -> f64 {
    if kappa < 1e-3 {
        let k2 = kappa * kappa;
        kappa / 3.0 - kappa * k2 / 45.0 + 2.0 * kappa * k2 * k2 / 945.0
    } else {
        1.0 / kappa.tanh() - 1.0 / kappa
    }
}

/// dK/dκ = 1/κ² − 1/sinh²κ, the variance of μᵀx under the vMF on S².
pub fn vmf_mean_length_derivative(kappa: f64) -> f64 {
    if kappa < 1e-3 {
        let k2 = kappa * kappa;
        1.0 / 3.0 - k2 / 15.0 + 2.0 * k2 * k2 / 189.0
    } else if kappa > 350.0 {
        1.0 / (kappa * kappa)
    } else {
        let s = kappa.sinh();
        1.0 / (kappa * kappa) - 1.0 / (s * s)
    }
}

/// log of C₃(κ) = κ / (4π sinh κ), stable for tiny and large κ.
pub fn vmf_log_normalizer(kappa: f64) -> f64 {
    // ln(sinh κ / κ)
    let ln_sinhc = if kappa < 1e-4 {
        kappa * kappa / 6.0
    } else {
        kappa + (-(-2.0 * kappa).exp()).ln_1p() - std::f64::consts::LN_2 - kappa.ln()
    };
    -(4.0 * std::f64::consts::PI).ln() - ln_sinhc
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
