use super::tensor::{Parameter, Real, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters for Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Optimizer state: one pair of moment tensors per parameter, in parameter order.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            names: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn bind(&mut self, params: &[&mut Parameter<T>]) -> Result<()> {
        if self.names.is_empty() {
            self.names = params.iter().map(|p| p.name.clone()).collect();
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.names.len() != params.len() || self.names.iter().zip(params).any(|(n, p)| n != &p.name) {
            return Err(Error::Parameter(
                "parameter list changed between optimizer steps".into(),
            ));
        }
        Ok(())
    }
}

/// One Adam update over `params`, in place.
///
/// Weight decay is decoupled: `value ← value·(1 − lr·wd)` before the Adam delta.
/// All gradients are validated before any parameter moves.
pub fn adam_step<T: Real>(params: &mut [&mut Parameter<T>], state: &mut AdamState<T>) -> Result<()> {
    state.bind(params)?;
    for p in params.iter() {
        if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                iteration: state.step,
                message: format!("non-finite gradient in {} at index {i}", p.name),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let lr = T::lit(c.lr);
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let eps = T::lit(c.epsilon);
    let decay = T::lit(1.0 - c.lr * c.weight_decay);
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grads = p.grad.data().to_vec();
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(&grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
