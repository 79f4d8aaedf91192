use crate::error::{Error, Result};

/// Curve on [0, 1] between fixed endpoints: the straight line plus a C¹
/// piecewise-cubic Hermite perturbation that vanishes at both ends.
///
/// Per latent dimension the free coefficients are the perturbation values
/// at the `S − 1` interior knots followed by its derivatives at all `S + 1`
/// knots, `2S` numbers in total; dimension `k` owns `coeffs[k*2S..(k+1)*2S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve {
    start: Vec<f64>,
    end: Vec<f64>,
    segments: usize,
    coeffs: Vec<f64>,
}

impl SplineCurve {
    /// The straight line from `start` to `end`.
    pub fn new(start: Vec<f64>, end: Vec<f64>, segments: usize) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(Error::Shape(format!("endpoints have {} and {} entries", start.len(), end.len())));
        }
        if segments == 0 {
            return Err(Error::Config("spline needs at least one segment".into()));
        }
        if start.iter().chain(&end).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve endpoint".into()));
        }
        let coeffs = vec![0.0; 2 * segments * start.len()];
        Ok(Self {
            start,
            end,
            segments,
            coeffs,
        })
    }

    pub fn with_coeffs(mut self, coeffs: Vec<f64>) -> Result<Self> {
        self.set_coeffs(coeffs)?;
        Ok(self)
    }

    pub fn set_coeffs(&mut self, coeffs: Vec<f64>) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::Shape(format!("expected {} coefficients, got {}", self.coeffs.len(), coeffs.len())));
        }
        self.coeffs = coeffs;
        Ok(())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn end(&self) -> &[f64] {
        &self.end
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    /// Coefficient slots and weights of the perturbation value at `t`
    /// (`deriv = false`) or of its t-derivative (`deriv = true`), within one
    /// dimension's block. Slots of the pinned end values are `None`.
    pub(crate) fn basis(&self, t: f64, deriv: bool) -> [(Option<usize>, f64); 4] {
        let s = self.segments;
        let h = 1.0 / s as f64;
        let seg = ((t * s as f64).floor() as usize).min(s - 1);
        let u = t * s as f64 - seg as f64;
        let (u2, u3) = (u * u, u * u * u);
        let w = if deriv {
            [
                (6.0 * u2 - 6.0 * u) / h,
                3.0 * u2 - 4.0 * u + 1.0,
                (-6.0 * u2 + 6.0 * u) / h,
                3.0 * u2 - 2.0 * u,
            ]
        } else {
            [
                2.0 * u3 - 3.0 * u2 + 1.0,
                h * (u3 - 2.0 * u2 + u),
                -2.0 * u3 + 3.0 * u2,
                h * (u3 - u2),
            ]
        };
        let value_slot = |knot: usize| (knot > 0 && knot < s).then(|| knot - 1);
        [
            (value_slot(seg), w[0]),
            (Some(s - 1 + seg), w[1]),
            (value_slot(seg + 1), w[2]),
            (Some(s + seg), w[3]),
        ]
    }

    fn combine(&self, t: f64, deriv: bool, out: &mut [f64]) {
        let block = 2 * self.segments;
        let basis = self.basis(t, deriv);
        for (k, o) in out.iter_mut().enumerate() {
            let line = if deriv {
                self.end[k] - self.start[k]
            } else {
                self.start[k] + t * (self.end[k] - self.start[k])
            };
            let coeffs = &self.coeffs[k * block..(k + 1) * block];
            *o = line
                + basis
                    .iter()
                    .filter_map(|(slot, w)| slot.map(|i| w * coeffs[i]))
                    .sum::<f64>();
        }
    }

    /// Position and velocity at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange(t));
        }
        let mut z = vec![0.0; self.dim()];
        let mut v = vec![0.0; self.dim()];
        self.combine(t, false, &mut z);
        self.combine(t, true, &mut v);
        if t == 0.0 {
            z.copy_from_slice(&self.start);
        } else if t == 1.0 {
            z.copy_from_slice(&self.end);
        }
        Ok((z, v))
    }

    pub fn point(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.0)
    }

    /// The `n + 1` points c(i/n), i = 0..=n.
    pub fn sample_points(&self, n: usize) -> Vec<Vec<f64>> {
        (0..=n)
            .map(|i| {
                if i == 0 {
                    self.start.clone()
                } else if i == n {
                    self.end.clone()
                } else {
                    let mut z = vec![0.0; self.dim()];
                    self.combine(i as f64 / n as f64, false, &mut z);
                    z
                }
            })
            .collect()
    }

    /// Chains gradients with respect to the sample points c(i/n) onto the
    /// free coefficients.
    pub(crate) fn coeff_gradient(&self, point_grads: &[Vec<f64>]) -> Vec<f64> {
        let n = point_grads.len() - 1;
        let block = 2 * self.segments;
        let mut out = vec![0.0; self.coeffs.len()];
        for (i, g) in point_grads.iter().enumerate().take(n).skip(1) {
            let basis = self.basis(i as f64 / n as f64, false);
            for (k, gk) in g.iter().enumerate() {
                for (slot, w) in &basis {
                    if let Some(j) = slot {
                        out[k * block + j] += gk * w;
                    }
                }
            }
        }
        out
    }
}
