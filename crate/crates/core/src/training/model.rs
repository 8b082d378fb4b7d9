//! Models with hand-written gradients.
//!
//! Parameters live in one flat vector. Layouts:
//! - linear regression: `w` (d), prediction `w.x`
//! - logistic: `w` (d), `P(y = 1) = sigmoid(w.x)`
//! - softmax linear: `W` (K x d, row-major) then `b` (K)
//! - MLP: per layer `W` (out x in) then `b` (out), ReLU between layers

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Task};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
    Logistic,
    SoftmaxLinear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Number of classes, or 1 for regression.
    pub output_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            input_dim,
            output_dim: 1,
            hidden: Vec::new(),
        }
    }

    pub fn logistic(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::Logistic,
            input_dim,
            output_dim: 2,
            hidden: Vec::new(),
        }
    }

    pub fn softmax_linear(input_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::SoftmaxLinear,
            input_dim,
            output_dim: classes,
            hidden: Vec::new(),
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            output_dim,
            hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        match self.kind {
            ModelKind::LinearRegression if self.output_dim != 1 => {
                Err(invalid("linear regression has a single output"))
            }
            ModelKind::Logistic if self.output_dim != 2 => {
                Err(invalid("logistic model has two classes"))
            }
            ModelKind::SoftmaxLinear if self.output_dim < 2 => {
                Err(invalid("softmax model needs at least two classes"))
            }
            ModelKind::Mlp if self.hidden.is_empty() || self.hidden.contains(&0) => {
                Err(invalid("MLP needs nonempty, positive hidden widths"))
            }
            _ => Ok(()),
        }
    }

    pub fn task(&self) -> Task {
        match self.kind {
            ModelKind::LinearRegression => Task::Regression,
            ModelKind::Logistic | ModelKind::SoftmaxLinear => Task::Classification,
            ModelKind::Mlp if self.output_dim == 1 => Task::Regression,
            ModelKind::Mlp => Task::Classification,
        }
    }

    /// Layer widths from input to output (MLP only).
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn num_params(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::Logistic => self.input_dim,
            ModelKind::SoftmaxLinear => self.output_dim * (self.input_dim + 1),
            ModelKind::Mlp => self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum(),
        }
    }

    /// Zeros for the linear models; for the MLP, weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        if self.kind == ModelKind::Mlp {
            let mut r = rng::stream(seed, Stream::Init);
            let mut off = 0;
            for w in self.widths().windows(2) {
                let bound = 1.0 / (w[0] as f64).sqrt();
                for p in &mut params[off..off + w[0] * w[1]] {
                    *p = r.random_range(-bound..bound);
                }
                off += w[1] * (w[0] + 1);
            }
        }
        params
    }

    fn check(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw outputs: prediction for regression, logits for classification
    /// (for the logistic model, the single logit of class 1).
    fn logits(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::Logistic => vec![dot(params, x)],
            ModelKind::SoftmaxLinear => {
                let (d, k) = (self.input_dim, self.output_dim);
                (0..k)
                    .map(|c| dot(&params[c * d..(c + 1) * d], x) + params[k * d + c])
                    .collect()
            }
            ModelKind::Mlp => {
                acts.clear();
                acts.push(x.to_vec());
                let widths = self.widths();
                let layers = widths.len() - 1;
                let mut off = 0;
                for (l, w) in widths.windows(2).enumerate() {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let input = &acts[l];
                    let weights = &params[off..off + fan_in * fan_out];
                    let bias = &params[off + fan_in * fan_out..off + fan_out * (fan_in + 1)];
                    let mut out: Vec<f64> = (0..fan_out)
                        .map(|j| dot(&weights[j * fan_in..(j + 1) * fan_in], input) + bias[j])
                        .collect();
                    if l + 1 < layers {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    acts.push(out);
                    off += fan_out * (fan_in + 1);
                }
                acts.pop().unwrap_or_default()
            }
        }
    }

    /// Class probabilities (classification) or the point prediction as a
    /// one-element vector (regression).
    pub fn predict(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(params, x)?;
        let z = self.logits(params, x, &mut Vec::new());
        Ok(match (self.kind, self.task()) {
            (ModelKind::Logistic, _) => {
                let p1 = sigmoid(z[0]);
                vec![1.0 - p1, p1]
            }
            (_, Task::Classification) => softmax(&z),
            (_, Task::Regression) => z,
        })
    }

    /// Per-example loss, writing the gradient into `grad`.
    ///
    /// Squared error `(y - f)^2 / 2` for regression, cross-entropy otherwise.
    pub fn loss_grad_into(
        &self,
        params: &[f64],
        x: &[f64],
        y: Label,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(params, x)?;
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        let mut acts = Vec::new();
        let z = self.logits(params, x, &mut acts);
        // dloss/dlogits
        let (loss, dz) = match (self.kind, self.task(), y) {
            (ModelKind::Logistic, _, Label::Class(c)) if c < 2 => {
                let t = c as f64;
                // log(1 + e^z) - t z
                let loss = softplus(z[0]) - t * z[0];
                (loss, vec![sigmoid(z[0]) - t])
            }
            (_, Task::Classification, Label::Class(c)) if c < self.output_dim => {
                let lse = log_sum_exp(&z);
                let mut dz: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
                dz[c] -= 1.0;
                (lse - z[c], dz)
            }
            (_, Task::Regression, Label::Target(t)) => {
                let r = z[0] - t;
                (0.5 * r * r, vec![r])
            }
            _ => return Err(invalid("label does not match the model's task")),
        };
        match self.kind {
            ModelKind::LinearRegression | ModelKind::Logistic => {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g = dz[0] * xi;
                }
            }
            ModelKind::SoftmaxLinear => {
                let (d, k) = (self.input_dim, self.output_dim);
                for c in 0..k {
                    for (g, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g = dz[c] * xi;
                    }
                    grad[k * d + c] = dz[c];
                }
            }
            ModelKind::Mlp => self.mlp_backward(params, &acts, dz, grad),
        }
        Ok(loss)
    }

    fn mlp_backward(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        mut delta: Vec<f64>,
        grad: &mut [f64],
    ) {
        let widths = self.widths();
        let offsets: Vec<usize> = widths
            .windows(2)
            .scan(0, |off, w| {
                let start = *off;
                *off += w[1] * (w[0] + 1);
                Some(start)
            })
            .collect();
        for l in (0..widths.len() - 1).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for j in 0..fan_out {
                let row = &mut grad[off + j * fan_in..off + (j + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g = delta[j] * a;
                }
                grad[off + fan_in * fan_out + j] = delta[j];
            }
            if l > 0 {
                let weights = &params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for j in 0..fan_out {
                    for (p, w) in prev.iter_mut().zip(&weights[j * fan_in..(j + 1) * fan_in]) {
                        *p += delta[j] * w;
                    }
                }
                // ReLU derivative on the hidden activation feeding layer l.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Smoothness constant of the per-example loss over `data`: an upper bound
    /// on the gradient Lipschitz constant. `None` for the MLP.
    ///
    /// Squared loss: `max |x|^2`. Logistic: `max |x|^2 / 4`. Softmax
    /// cross-entropy: `max (|x|^2 + 1) / 2` (the `+1` is the bias input).
    pub fn smoothness_constant(&self, data: &Dataset) -> Option<f64> {
        let max_sq = data
            .rows()
            .map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        match self.kind {
            ModelKind::LinearRegression => Some(max_sq),
            ModelKind::Logistic => Some(max_sq / 4.0),
            ModelKind::SoftmaxLinear => Some((max_sq + 1.0) / 2.0),
            ModelKind::Mlp => None,
        }
    }
}

/// Loss and gradient of one example.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &[f64],
    x: &[f64],
    y: Label,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let loss = spec.loss_grad_into(params, x, y, &mut grad)?;
    Ok((loss, grad))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}
