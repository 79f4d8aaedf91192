//! File formats: decoder weights (JSON), latent codes (CSV), metric grids
//! (JSON) and fitted LAND models (JSON). Floats are written in shortest
//! round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decoder::{Activation, DecoderMap, Head, Layer, UncertaintyReg};
use crate::error::{Error, Result};
use crate::families::FamilyKind;
use crate::land::LandModel;
use crate::metric::{GridSpec, MetricGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` weight matrix.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderFile {
    pub latent_dim: usize,
    pub feature_count: usize,
    pub family: FamilyKind,
    pub heads: Vec<HeadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<UncertaintyReg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecoderFile {
    pub fn from_decoder(dec: &DecoderMap, seed: Option<u64>) -> Self {
        let heads = dec
            .heads()
            .iter()
            .map(|h| HeadSpec {
                name: h.name().to_string(),
                layers: h
                    .layers()
                    .iter()
                    .map(|l| LayerSpec {
                        rows: l.outputs(),
                        cols: l.inputs(),
                        weight: l.weight().transpose().iter().copied().collect(),
                        bias: l.bias().iter().copied().collect(),
                        activation: l.activation(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            latent_dim: dec.latent_dim(),
            feature_count: dec.feature_count(),
            family: dec.family(),
            heads,
            regularization: dec.regularization().cloned(),
            seed,
        }
    }

    pub fn to_decoder(&self) -> Result<DecoderMap> {
        let heads = self
            .heads
            .iter()
            .map(|h| {
                let layers = h
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                            return Err(Error::Shape(format!(
                                "head '{}' layer {i}: {}x{} weights need {} entries and {} biases, got {} and {}",
                                h.name,
                                l.rows,
                                l.cols,
                                l.rows * l.cols,
                                l.rows,
                                l.weight.len(),
                                l.bias.len()
                            )));
                        }
                        Layer::new(
                            DMatrix::from_row_slice(l.rows, l.cols, &l.weight),
                            DVector::from_column_slice(&l.bias),
                            l.activation,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Head::new(h.name.clone(), layers)
            })
            .collect::<Result<Vec<_>>>()?;
        let dec = DecoderMap::new(self.latent_dim, self.feature_count, self.family, heads)?;
        match &self.regularization {
            Some(reg) => dec.with_regularization(reg.clone()),
            None => Ok(dec),
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_decoder(path: &Path) -> Result<DecoderMap> {
    read_json::<DecoderFile>(path)?.to_decoder()
}

/// Latent codes from a CSV with header `z0,z1,...`.
pub fn read_codes(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_codes(csv::Reader::from_path(path)?)
}

pub fn parse_codes<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Vec<Vec<f64>>> {
    let width = reader.headers()?.len();
    if width == 0 {
        return Err(Error::Shape("codes file has no columns".into()));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Shape(format!("codes row {i} has {} entries, expected {width}", record.len())));
        }
        let row = record
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("codes row {i}: '{v}' is not a number ({e})")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_codes<W: Write>(out: W, codes: &[Vec<f64>]) -> Result<()> {
    let width = codes.first().map_or(0, |c| c.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..width).map(|k| format!("z{k}")))?;
    for c in codes {
        if c.len() != width {
            return Err(Error::Shape("codes are not rectangular".into()));
        }
        w.write_record(c.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Serialized metric grid; tensors are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    #[serde(flatten)]
    pub spec: GridSpec,
    pub mode: String,
    pub points: Vec<Vec<f64>>,
    pub tensors: Vec<Vec<f64>>,
    /// ½·log det M per lattice point; null where M is not positive definite.
    pub log_sqrt_det: Vec<Option<f64>>,
    /// Mean |KL − ½δᵀMδ| over probe directions, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_error: Option<Vec<f64>>,
}

impl GridFile {
    pub fn from_grid(grid: &MetricGrid, mode: &str, validation_error: Option<Vec<f64>>) -> Self {
        Self {
            spec: grid.spec().clone(),
            mode: mode.to_string(),
            points: grid.points().to_vec(),
            tensors: grid.tensors().iter().map(row_major).collect(),
            log_sqrt_det: grid.tensors().iter().map(crate::metric::half_log_det).collect(),
            validation_error,
        }
    }

    pub fn to_grid(&self) -> Result<MetricGrid> {
        let d = self.spec.dim();
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                if t.len() != d * d {
                    return Err(Error::Shape(format!("grid tensor with {} entries in {d} dimensions", t.len())));
                }
                Ok(DMatrix::from_row_slice(d, d, t))
            })
            .collect::<Result<Vec<_>>>()?;
        MetricGrid::new(self.spec.clone(), tensors)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandFile {
    pub mean: Vec<f64>,
    /// Precision matrix rows.
    pub precision: Vec<Vec<f64>>,
    pub norm_const: f64,
    pub norm_const_se: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// The metric source the model was fitted against.
    pub metric_ref: String,
    pub converged: bool,
    pub iterations: usize,
}

impl LandFile {
    pub fn new(model: &LandModel, metric_ref: &str, converged: bool, iterations: usize) -> Self {
        Self {
            mean: model.mean.clone(),
            precision: model.precision.row_iter().map(|r| r.iter().copied().collect()).collect(),
            norm_const: model.norm_const,
            norm_const_se: model.norm_const_se,
            mc_samples: model.mc_samples,
            seed: model.seed,
            metric_ref: metric_ref.to_string(),
            converged,
            iterations,
        }
    }

    pub fn to_model(&self) -> Result<LandModel> {
        let d = self.mean.len();
        if self.precision.len() != d || self.precision.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("precision must be {d}x{d}")));
        }
        let model = LandModel {
            mean: self.mean.clone(),
            precision: DMatrix::from_row_iterator(d, d, self.precision.iter().flatten().copied()),
            norm_const: self.norm_const,
            norm_const_se: self.norm_const_se,
            mc_samples: self.mc_samples,
            seed: self.seed,
        };
        model.validate()?;
        Ok(model)
    }
}
