//! Group normalization and a one-hidden-layer MLP built around it.
//!
//! Group normalization only uses statistics of a single sample's own
//! channels, so a sample's output never depends on the rest of its batch.
//! Batch normalization lacks that property, which is what makes per-sample
//! privacy reasoning break down.

use super::{cross_entropy, Model, ModelError};
use crate::data::Dataset;
use crate::rng::Stream;
use crate::types::ParameterVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupNormSpec {
    pub num_groups: usize,
    pub width: usize,
    pub eps: f64,
}

impl GroupNormSpec {
    pub const DEFAULT_GROUPS: usize = 32;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(num_groups: usize, width: usize, eps: f64) -> Result<Self, ModelError> {
        if num_groups == 0 || !width.is_multiple_of(num_groups) {
            return Err(ModelError::IndivisibleGroups {
                width,
                groups: num_groups,
            });
        }
        Ok(Self { num_groups, width, eps })
    }

    pub fn group_size(&self) -> usize {
        self.width / self.num_groups
    }
}

/// Intermediate values kept for the backward pass.
struct Normalized {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn normalize(x: &[f64], spec: &GroupNormSpec) -> Normalized {
    let m = spec.group_size();
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(spec.num_groups);
    for (g, chunk) in x.chunks_exact(m).enumerate() {
        let mean = chunk.iter().sum::<f64>() / m as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let denom = (var + spec.eps).sqrt();
        // A zero-variance group with eps = 0 normalizes to zero.
        let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        inv_std.push(inv);
        for (k, v) in chunk.iter().enumerate() {
            xhat[g * m + k] = (v - mean) * inv;
        }
    }
    Normalized { xhat, inv_std }
}

/// `gain * (x - mean_g) / sqrt(var_g + eps) + bias` over contiguous groups,
/// with the population variance of each group.
pub fn group_normalize(
    x: &[f64],
    spec: &GroupNormSpec,
    gain: &[f64],
    bias: &[f64],
) -> Result<Vec<f64>, ModelError> {
    for len in [x.len(), gain.len(), bias.len()] {
        if len != spec.width {
            return Err(ModelError::DimensionMismatch {
                expected: spec.width,
                got: len,
            });
        }
    }
    let n = normalize(x, spec);
    Ok(n
        .xhat
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((h, g), b)| g * h + b)
        .collect())
}

/// linear -> group norm -> ReLU -> linear, trained with softmax cross-entropy.
///
/// Parameter layout: `w1 (h x d)`, `b1 (h)`, `gain (h)`, `beta (h)`,
/// `w2 (c x h)`, `b2 (c)`.
#[derive(Clone, Debug)]
pub struct GroupNormMlp {
    dim: usize,
    hidden: usize,
    classes: usize,
    spec: GroupNormSpec,
    params: Vec<f64>,
}

struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    gain: std::ops::Range<usize>,
    beta: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
}

impl Layout {
    fn new(d: usize, h: usize, c: usize) -> Self {
        let w1 = 0..h * d;
        let b1 = w1.end..w1.end + h;
        let gain = b1.end..b1.end + h;
        let beta = gain.end..gain.end + h;
        let w2 = beta.end..beta.end + c * h;
        let b2 = w2.end..w2.end + c;
        Self { w1, b1, gain, beta, w2, b2 }
    }

    fn len(&self) -> usize {
        self.b2.end
    }
}

/// He-style init for both linear layers, unit gain, zero biases.
pub fn make_groupnorm_mlp(
    feature_dim: usize,
    hidden_width: usize,
    num_groups: usize,
    num_classes: usize,
    rng: &mut Stream,
) -> Result<GroupNormMlp, ModelError> {
    let spec = GroupNormSpec::new(num_groups, hidden_width, GroupNormSpec::DEFAULT_EPS)?;
    let layout = Layout::new(feature_dim, hidden_width, num_classes);
    let mut params = vec![0.0; layout.len()];
    let s1 = (2.0 / feature_dim as f64).sqrt();
    for w in &mut params[layout.w1.clone()] {
        *w = s1 * rng.normal();
    }
    params[layout.gain.clone()].fill(1.0);
    let s2 = (1.0 / hidden_width as f64).sqrt();
    for w in &mut params[layout.w2.clone()] {
        *w = s2 * rng.normal();
    }
    Ok(GroupNormMlp {
        dim: feature_dim,
        hidden: hidden_width,
        classes: num_classes,
        spec,
        params,
    })
}

struct Activations {
    normalized: Normalized,
    relu: Vec<f64>,
    logits: Vec<f64>,
}

impl GroupNormMlp {
    pub fn spec(&self) -> &GroupNormSpec {
        &self.spec
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dim, self.hidden, self.classes)
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let l = self.layout();
        let p = &self.params;
        let (w1, b1) = (&p[l.w1.clone()], &p[l.b1.clone()]);
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| b1[j] + w1[j * self.dim..(j + 1) * self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let normalized = normalize(&pre, &self.spec);
        let (gain, beta) = (&p[l.gain.clone()], &p[l.beta.clone()]);
        let relu: Vec<f64> = (0..self.hidden)
            .map(|j| (gain[j] * normalized.xhat[j] + beta[j]).max(0.0))
            .collect();
        let (w2, b2) = (&p[l.w2.clone()], &p[l.b2.clone()]);
        let logits = (0..self.classes)
            .map(|c| b2[c] + w2[c * self.hidden..(c + 1) * self.hidden].iter().zip(&relu).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Activations {
            normalized,
            relu,
            logits,
        }
    }
}

impl Model for GroupNormMlp {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn parameters(&self) -> ParameterVector {
        ParameterVector::from_vec_unchecked(self.params.clone())
    }

    fn set_parameters(&mut self, params: &ParameterVector) -> Result<(), ModelError> {
        if params.dim() != self.params.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.params.len(),
                got: params.dim(),
            });
        }
        self.params.copy_from_slice(params.as_slice());
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).logits
    }

    fn loss_and_gradient(&self, data: &Dataset, indices: &[usize]) -> (f64, ParameterVector) {
        let l = self.layout();
        let (h, d, c) = (self.hidden, self.dim, self.classes);
        let m = self.spec.group_size();
        let p = &self.params;
        let gain = &p[l.gain.clone()];
        let beta = &p[l.beta.clone()];
        let w2 = &p[l.w2.clone()];
        let mut grad = vec![0.0; p.len()];
        let scale = 1.0 / indices.len().max(1) as f64;
        let mut loss = 0.0;

        let mut d_relu = vec![0.0; h];
        let mut d_xhat = vec![0.0; h];
        let mut d_pre = vec![0.0; h];
        for &i in indices {
            let x = data.row(i);
            let act = self.activations(x);
            let (li, dlogits) = cross_entropy(&act.logits, data.label(i));
            loss += li;

            d_relu.fill(0.0);
            for k in 0..c {
                let dk = dlogits[k] * scale;
                grad[l.b2.start + k] += dk;
                let row = k * h;
                for j in 0..h {
                    grad[l.w2.start + row + j] += dk * act.relu[j];
                    d_relu[j] += dk * w2[row + j];
                }
            }
            let xhat = &act.normalized.xhat;
            for j in 0..h {
                let pre_act = gain[j] * xhat[j] + beta[j];
                let dy = if pre_act > 0.0 { d_relu[j] } else { 0.0 };
                grad[l.gain.start + j] += dy * xhat[j];
                grad[l.beta.start + j] += dy;
                d_xhat[j] = dy * gain[j];
            }
            // d pre = inv_std * (d_xhat - mean(d_xhat) - xhat * mean(d_xhat * xhat)) per group.
            for g in 0..self.spec.num_groups {
                let r = g * m..(g + 1) * m;
                let mean_d = d_xhat[r.clone()].iter().sum::<f64>() / m as f64;
                let mean_dx = r.clone().map(|j| d_xhat[j] * xhat[j]).sum::<f64>() / m as f64;
                let inv = act.normalized.inv_std[g];
                for j in r {
                    d_pre[j] = inv * (d_xhat[j] - mean_d - xhat[j] * mean_dx);
                }
            }
            for j in 0..h {
                grad[l.b1.start + j] += d_pre[j];
                let row = l.w1.start + j * d;
                for (gk, xk) in grad[row..row + d].iter_mut().zip(x) {
                    *gk += d_pre[j] * xk;
                }
            }
        }
        (loss * scale, ParameterVector::from_vec_unchecked(grad))
    }

    fn clone_box(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }
}
