//! SGD with momentum and L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};

/// Velocity buffers plus hyperparameters. Buffers are created on the first
/// step and must keep the parameter shapes afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(DeftError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(DeftError::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(DeftError::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocities: Vec::new(),
        })
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    /// One update over every parameter block:
    ///
    /// ```text
    /// v <- momentum * v + grad + weight_decay * param
    /// param <- param - lr * v
    /// ```
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DeftError::dim(params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(DeftError::dim(p.len(), g.len()));
            }
        }
        if let Some(pos) = grads.iter().flat_map(|g| g.iter()).position(|v| !v.is_finite()) {
            return Err(DeftError::Divergence {
                epoch: 0,
                batch: 0,
                message: format!("non-finite gradient entry {pos}"),
            });
        }
        if self.velocities.is_empty() {
            self.velocities = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.velocities.len() != params.len() || self.velocities.iter().zip(params.iter()).any(|(v, p)| v.len() != p.len()) {
            return Err(DeftError::DataValidation(
                "optimizer velocity shapes no longer match the parameters".into(),
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocities) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptimizerState::step`].
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimizerState) -> Result<()> {
    state.step(params, grads)
}
