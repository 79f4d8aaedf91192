use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::special::{sigmoid, softplus};

/// Output nonlinearity of a layer.
///
/// `Softmax` and `UnitNormalize` act on consecutive groups of equal size
/// (one group per decoded feature); every other activation is elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
    Softmax,
    UnitNormalize,
    Scale(f64),
    /// Elementwise a², for heads that emit a standard deviation but feed a
    /// variance parameter.
    Square,
}

impl Activation {
    pub fn is_grouped(self) -> bool {
        matches!(self, Activation::Softmax | Activation::UnitNormalize)
    }

    pub fn apply(self, a: &DVector<f64>, groups: usize) -> DVector<f64> {
        match self {
            Activation::Identity => a.clone(),
            Activation::Tanh => a.map(f64::tanh),
            Activation::Sigmoid => a.map(sigmoid),
            Activation::Softplus => a.map(softplus),
            Activation::Scale(c) => a * c,
            Activation::Square => a.map(|v| v * v),
            Activation::Softmax => {
                let mut y = a.clone();
                for chunk in y.as_mut_slice().chunks_mut(a.len() / groups) {
                    let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    chunk.iter_mut().for_each(|v| *v = (*v - max).exp());
                    let s: f64 = chunk.iter().sum();
                    chunk.iter_mut().for_each(|v| *v /= s);
                }
                y
            }
            Activation::UnitNormalize => {
                let mut y = a.clone();
                for chunk in y.as_mut_slice().chunks_mut(a.len() / groups) {
                    let n = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
                    chunk.iter_mut().for_each(|v| *v /= n);
                }
                y
            }
        }
    }

    /// Left-multiplies `j` (∂a/∂z) by ∂y/∂a, given pre-activation `a` and
    /// output `y`.
    pub fn chain(self, a: &DVector<f64>, y: &DVector<f64>, groups: usize, j: &DMatrix<f64>) -> DMatrix<f64> {
        let elementwise = |d: &dyn Fn(usize) -> f64| {
            let mut out = j.clone();
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row *= d(i);
            }
            out
        };
        match self {
            Activation::Identity => j.clone(),
            Activation::Scale(c) => j * c,
            Activation::Square => elementwise(&|i| 2.0 * a[i]),
            Activation::Tanh => elementwise(&|i| 1.0 - y[i] * y[i]),
            Activation::Sigmoid => elementwise(&|i| y[i] * (1.0 - y[i])),
            Activation::Softplus => elementwise(&|i| sigmoid(a[i])),
            Activation::Softmax | Activation::UnitNormalize => {
                let q = a.len() / groups;
                let mut out = DMatrix::zeros(j.nrows(), j.ncols());
                for g in 0..groups {
                    let r = g * q;
                    let yg = y.rows(r, q);
                    let block = if self == Activation::Softmax {
                        DMatrix::from_diagonal(&yg.clone_owned()) - &yg * yg.transpose()
                    } else {
                        let n = a.rows(r, q).norm();
                        (DMatrix::identity(q, q) - &yg * yg.transpose()) / n
                    };
                    out.rows_mut(r, q).copy_from(&(block * j.rows(r, q)));
                }
                out
            }
        }
    }
}
