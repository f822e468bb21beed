use serde::{Deserialize, Serialize};

use super::{ModelParameters, NamedTensor, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "AdamConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_epsilon")]
    pub epsilon: f64,
}

impl AdamConfig {
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_epsilon() -> f64 {
        1e-8
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for every parameter tensor plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
}

/// `base^exp` by repeated squaring; IEEE multiplication keeps it bit-stable
/// across hosts, unlike `powf`.
fn pow_exact(base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ModelParameters<F>, config: AdamConfig) -> Self {
        let zeros = |p: &ModelParameters<F>| {
            p.tensors()
                .iter()
                .map(|t| Tensor::zeros(t.tensor.dims().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// Mirror [`ModelParameters::select_head_rows`] on the moment tensors.
    pub fn select_head_rows(&mut self, rows: &[usize]) {
        for moments in [&mut self.first, &mut self.second] {
            let n = moments.len();
            for t in &mut moments[n - 2..] {
                *t = t.select_rows(rows);
            }
        }
    }

    pub fn moment_count(&self) -> usize {
        self.first.iter().chain(&self.second).map(Tensor::len).sum()
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort before any
/// parameter is touched.
pub fn adam_step<F: Real>(
    params: &mut ModelParameters<F>,
    grads: &[NamedTensor<F>],
    state: &mut OptimizerState<F>,
) -> Result<()> {
    if grads.len() != params.tensors().len() || state.first.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.tensors().len()
        )));
    }
    for (g, p) in grads.iter().zip(params.tensors()) {
        if g.tensor.dims() != p.tensor.dims() {
            return Err(Error::InvalidArgument(format!(
                "gradient {} has dims {:?}, parameter has {:?}",
                g.name,
                g.tensor.dims(),
                p.tensor.dims()
            )));
        }
        if !g.tensor.is_finite() {
            return Err(Error::NumericFault(format!("non-finite gradient in {}", g.name)));
        }
    }
    let c = state.config;
    state.step += 1;
    let bc1 = 1.0 - pow_exact(c.beta1, state.step);
    let bc2 = 1.0 - pow_exact(c.beta2, state.step);
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
    let step_size = F::of(c.learning_rate / bc1);
    let inv_bc2_sqrt = F::of(1.0 / bc2.sqrt());
    let eps = F::of(c.epsilon);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].tensor.data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            *w -= step_size * m[j] / (v[j].sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}
