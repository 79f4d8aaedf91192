//! Decoder maps z ↦ η from latent codes to likelihood parameters.
//!
//! A decoder is a list of heads, each a stack of affine layers. Head `h`
//! emits `D * q_h` numbers for `D` features; feature `f` takes the slice
//! `[f*q_h, (f+1)*q_h)` of every head, concatenated in head order, as its
//! parameter vector. The `q_h` must add up to the family's parameter count.

mod activation;
mod kmeans;
mod toy;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{fisher_rao, max_uncertainty_params, Extrapolation, FamilyKind, ParamPoint};
use crate::rng::RngStream;
use crate::special::{sigmoid, softplus};

pub use activation::Activation;
pub use kmeans::{kmeans_fit, KMeansFit};
pub use toy::{toy_circle_codes, toy_decoder, ToyFamily};

/// Default offset `c` of the translated sigmoid.
pub const DEFAULT_SIGMOID_OFFSET: f64 = 7.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "layer weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(Self { weight, bias, activation })
    }

    /// Weights and biases drawn from U(−1/√fan_in, 1/√fan_in).
    pub fn random(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = DMatrix::from_row_iterator(
            outputs,
            inputs,
            (0..outputs * inputs).map(|_| rng.random_range(-bound..bound)),
        );
        let bias = DVector::from_iterator(outputs, (0..outputs).map(|_| rng.random_range(-bound..bound)));
        Self { weight, bias, activation }
    }

    /// Identity weights followed by `activation`, e.g. a fixed rescaling.
    pub fn pointwise(width: usize, activation: Activation) -> Self {
        Self {
            weight: DMatrix::identity(width, width),
            bias: DVector::zeros(width),
            activation,
        }
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    name: String,
    layers: Vec<Layer>,
}

impl Head {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return Err(Error::Shape(format!("head '{name}' has no layers")));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape(format!(
                    "head '{name}': layer of width {} feeds a layer expecting {}",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        Ok(Self { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    fn eval(&self, z: &DVector<f64>, groups: usize, jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let mut x = z.clone();
        let mut j = jac.then(|| DMatrix::identity(z.len(), z.len()));
        for layer in &self.layers {
            let a = &layer.weight * &x + &layer.bias;
            let y = layer.activation.apply(&a, groups);
            j = j.map(|j| layer.activation.chain(&a, &y, groups, &(&layer.weight * j)));
            x = y;
        }
        (x, j)
    }
}

/// Blends decoded parameters toward maximum-uncertainty parameters away
/// from the support of the training codes, summarized by k-means centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReg {
    pub centers: Vec<Vec<f64>>,
    pub beta: f64,
    #[serde(default = "default_offset")]
    pub c: f64,
    #[serde(default)]
    pub extrapolation: Extrapolation,
}

fn default_offset() -> f64 {
    DEFAULT_SIGMOID_OFFSET
}

impl UncertaintyReg {
    pub fn new(centers: Vec<Vec<f64>>, beta: f64) -> Result<Self> {
        let reg = Self {
            centers,
            beta,
            c: DEFAULT_SIGMOID_OFFSET,
            extrapolation: Extrapolation::default(),
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.centers.first() else {
            return Err(Error::InvalidK("regularization needs at least one center".into()));
        };
        if self.centers.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Shape("regularization centers have differing dimensions".into()));
        }
        if !(softplus(self.beta) > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!(
                "translated sigmoid needs softplus(beta) > 0 and finite c (beta = {}, c = {})",
                self.beta, self.c
            )));
        }
        Ok(())
    }

    fn nearest(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centers.iter().enumerate() {
            let d: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// D(z): squared Euclidean distance to the nearest center.
    pub fn support_distance(&self, z: &[f64]) -> f64 {
        self.nearest(z).1
    }

    /// Sigmoid((d − c·softplus(β)) / softplus(β)).
    pub fn translated_sigmoid(&self, d: f64) -> f64 {
        let s = softplus(self.beta);
        sigmoid((d - self.c * s) / s)
    }

    fn translated_sigmoid_derivative(&self, d: f64) -> f64 {
        let y = self.translated_sigmoid(d);
        y * (1.0 - y) / softplus(self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMap {
    latent_dim: usize,
    feature_count: usize,
    family: FamilyKind,
    heads: Vec<Head>,
    regularization: Option<UncertaintyReg>,
}

impl DecoderMap {
    pub fn new(latent_dim: usize, feature_count: usize, family: FamilyKind, heads: Vec<Head>) -> Result<Self> {
        if latent_dim == 0 || feature_count == 0 {
            return Err(Error::Shape("latent_dim and feature_count must be positive".into()));
        }
        let mut per_feature = 0;
        for head in &heads {
            if head.inputs() != latent_dim {
                return Err(Error::Shape(format!(
                    "head '{}' expects {} inputs, latent_dim is {latent_dim}",
                    head.name,
                    head.inputs()
                )));
            }
            if head.outputs() % feature_count != 0 {
                return Err(Error::Shape(format!(
                    "head '{}' emits {} values, not a multiple of {feature_count} features",
                    head.name,
                    head.outputs()
                )));
            }
            for layer in &head.layers {
                if layer.activation.is_grouped() && layer.outputs() % feature_count != 0 {
                    return Err(Error::Shape(format!(
                        "head '{}': grouped activation over {} outputs",
                        head.name,
                        layer.outputs()
                    )));
                }
            }
            per_feature += head.outputs() / feature_count;
        }
        if per_feature != family.param_dim() {
            return Err(Error::Shape(format!(
                "heads emit {per_feature} parameters per feature, {family} needs {}",
                family.param_dim()
            )));
        }
        Ok(Self {
            latent_dim,
            feature_count,
            family,
            heads,
            regularization: None,
        })
    }

    pub fn with_regularization(mut self, reg: UncertaintyReg) -> Result<Self> {
        reg.validate()?;
        if reg.centers[0].len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "centers have dimension {}, latent_dim is {}",
                reg.centers[0].len(),
                self.latent_dim
            )));
        }
        self.regularization = Some(reg);
        Ok(self)
    }

    pub fn without_regularization(&self) -> Self {
        Self {
            regularization: None,
            ..self.clone()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn regularization(&self) -> Option<&UncertaintyReg> {
        self.regularization.as_ref()
    }

    /// Total number of decoded parameters, `feature_count * param_dim`.
    pub fn output_dim(&self) -> usize {
        self.feature_count * self.family.param_dim()
    }

    fn check_latent(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape(format!("latent point has {} entries, expected {}", z.len(), self.latent_dim)));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent point {z:?}")));
        }
        Ok(DVector::from_column_slice(z))
    }

    /// Unregularized decoder output and optionally its Jacobian, in the
    /// flat feature-major layout.
    fn decode(&self, z: &DVector<f64>, jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let p = self.family.param_dim();
        let n = self.output_dim();
        let mut out = DVector::zeros(n);
        let mut j = jac.then(|| DMatrix::zeros(n, self.latent_dim));
        let mut offset = 0;
        for head in &self.heads {
            let q = head.outputs() / self.feature_count;
            let (y, jy) = head.eval(z, self.feature_count, jac);
            for f in 0..self.feature_count {
                for k in 0..q {
                    let row = f * p + offset + k;
                    out[row] = y[f * q + k];
                    if let (Some(j), Some(jy)) = (j.as_mut(), jy.as_ref()) {
                        j.row_mut(row).copy_from(&jy.row(f * q + k));
                    }
                }
            }
            offset += q;
        }
        (out, j)
    }

    /// Rows of the flat layout that are blended by the regularization.
    fn blended(&self, row: usize) -> bool {
        self.family != FamilyKind::VonMisesFisherS2 || row % 4 == 3
    }

    fn extrapolation_target(&self, reg: &UncertaintyReg) -> Vec<f64> {
        let e = max_uncertainty_params(self.family, &reg.extrapolation);
        e.values().repeat(self.feature_count)
    }

    fn regularize(
        &self,
        reg: &UncertaintyReg,
        z: &DVector<f64>,
        h: DVector<f64>,
        jh: Option<DMatrix<f64>>,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let (nearest, d) = reg.nearest(z.as_slice());
        let s = reg.translated_sigmoid(d);
        let e = self.extrapolation_target(reg);
        let mut out = h.clone();
        for row in 0..out.len() {
            if self.blended(row) {
                out[row] = (1.0 - s) * h[row] + s * e[row];
            }
        }
        let j = jh.map(|jh| {
            // ∇s = σ̃′(D) · 2(z − c*) with the nearest center held fixed
            let ds = reg.translated_sigmoid_derivative(d);
            let grad: Vec<f64> = z.iter().zip(&reg.centers[nearest]).map(|(a, c)| 2.0 * ds * (a - c)).collect();
            let mut j = jh;
            for row in 0..out.len() {
                if self.blended(row) {
                    let gap = e[row] - h[row];
                    for (k, g) in grad.iter().enumerate() {
                        j[(row, k)] = (1.0 - s) * j[(row, k)] + gap * g;
                    }
                }
            }
            j
        });
        (out, j)
    }

    /// Decoded parameters in the flat feature-major layout, regularized if
    /// the decoder carries a regularization.
    pub fn forward_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        let z = self.check_latent(z)?;
        let (h, _) = self.decode(&z, false);
        let out = match &self.regularization {
            Some(reg) => self.regularize(reg, &z, h, None).0,
            None => h,
        };
        Ok(out.as_slice().to_vec())
    }

    /// Decoded parameters and the Jacobian ∂η/∂z, `output_dim × latent_dim`.
    pub fn forward_with_jacobian(&self, z: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let z = self.check_latent(z)?;
        let (h, jh) = self.decode(&z, true);
        let (out, j) = match &self.regularization {
            Some(reg) => self.regularize(reg, &z, h, jh),
            None => (h, jh),
        };
        Ok((out.as_slice().to_vec(), j.expect("jacobian requested")))
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.forward_with_jacobian(z)?.1)
    }

    /// One guarded parameter point per feature.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<ParamPoint>> {
        self.split(&self.forward_flat(z)?)
    }

    /// Splits a flat parameter vector into guarded per-feature points.
    pub fn split(&self, flat: &[f64]) -> Result<Vec<ParamPoint>> {
        let p = self.family.param_dim();
        if flat.len() != self.output_dim() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.output_dim(), flat.len())));
        }
        flat.chunks(p).map(|c| ParamPoint::guarded(self.family, c.to_vec())).collect()
    }

    /// The regularized output; fails for decoders without regularization.
    pub fn reweight(&self, z: &[f64]) -> Result<Vec<ParamPoint>> {
        if self.regularization.is_none() {
            return Err(Error::NoRegularization);
        }
        self.forward(z)
    }

    /// D(z) under the decoder's regularization.
    pub fn support_distance(&self, z: &[f64]) -> Result<f64> {
        Ok(self.regularization.as_ref().ok_or(Error::NoRegularization)?.support_distance(z))
    }
}

/// Block-diagonal Fisher-Rao tensor of a product of independent features.
pub fn product_fisher(points: &[ParamPoint]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let family = first.family();
    let p = family.param_dim();
    let mut m = DMatrix::zeros(p * points.len(), p * points.len());
    for (f, point) in points.iter().enumerate() {
        if point.family() != family {
            return Err(Error::FamilyMismatch(family, point.family()));
        }
        m.view_mut((f * p, f * p), (p, p)).copy_from(&fisher_rao(point)?);
    }
    Ok(m)
}
