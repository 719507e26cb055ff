//! AdamW with a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tape::{Gradients, Var};
use crate::numeric::Matrix;
use crate::scalar::Scalar;

/// A trainable matrix and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Matrix<T>) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
        }
    }

    /// Adds the gradient recorded for `var` (if any) to `self.grad`.
    pub fn accumulate(&mut self, grads: &Gradients<T>, var: Var<'_, T>) {
        if let Some(g) = grads.get(var) {
            self.grad.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        let (r, c) = self.value.shape();
        self.grad = Matrix::zeros(r, c);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Length of the cosine schedule in optimizer steps.
    pub total_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            total_steps: 1,
        }
    }
}

impl AdamWConfig {
    /// Learning rate after `step` completed updates: `lr·(1 + cos(π·t/T))/2`, clamped at T.
    pub fn lr_at(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1);
        let t = step.min(total) as f64 / total as f64;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    first: Matrix<T>,
    second: Matrix<T>,
}

/// Optimizer state: per-parameter moment estimates and the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Completed updates so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Rate the next call to [`step`](Self::step) will use.
    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    /// Applies one decoupled-weight-decay update to every parameter, then zeroes grads.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if params.is_empty() {
            return Err(Error::EmptyParameterList);
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let (r, c) = p.value.shape();
                    Moments {
                        first: Matrix::zeros(r, c),
                        second: Matrix::zeros(r, c),
                    }
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::ParameterLayout(format!(
                "{} moment slots for {} parameters",
                self.moments.len(),
                params.len()
            )));
        }
        let c = &self.config;
        let lr = T::of(c.lr_at(self.step));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let t = (self.step + 1) as i32;
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let (eps, wd) = (T::of(c.eps), T::of(c.weight_decay));

        for (p, m) in params.iter_mut().zip(self.moments.iter_mut()) {
            if p.value.shape() != m.first.shape() || p.grad.shape() != p.value.shape() {
                return Err(Error::ParameterLayout(format!("parameter {} changed shape", p.name)));
            }
            let grad = p.grad.as_slice();
            let first = m.first.as_mut_slice();
            let second = m.second.as_mut_slice();
            let value = p.value.as_mut_slice();
            for i in 0..value.len() {
                let g = grad[i];
                value[i] -= lr * wd * value[i];
                first[i] = b1 * first[i] + (T::one() - b1) * g;
                second[i] = b2 * second[i] + (T::one() - b2) * g * g;
                let m_hat = first[i] / bias1;
                let v_hat = second[i] / bias2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        self.step += 1;
        Ok(())
    }
}
