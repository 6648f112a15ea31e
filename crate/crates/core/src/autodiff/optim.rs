//! Adam with bias-corrected moments.

use super::array::Array;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl AdamState {
    /// Zeroed moments matching `shapes`.
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Array::zeros(s)).collect(),
            v: shapes.iter().map(|s| Array::zeros(s)).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[Array]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(config, &shapes)
    }

    /// Advance the moments with `grads` and return the additive update
    /// `-lr · m̂ / (√v̂ + eps)` for each parameter without applying it.
    pub fn direction(&mut self, grads: &[Array]) -> Result<Vec<Array>> {
        if grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!("{} grads for {} parameters", grads.len(), self.m.len()),
            ));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam", format!("{:?} vs {:?}", g.shape(), m.shape())));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut out = Vec::with_capacity(grads.len());
        for ((g, m), v) in grads.iter().zip(&mut self.m).zip(&mut self.v) {
            let mut upd = Vec::with_capacity(g.len());
            for ((&gi, mi), vi) in g.data().iter().zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                upd.push(-lr * mhat / (vhat.sqrt() + eps));
            }
            out.push(Array::from_parts(g.shape().to_vec(), upd));
        }
        Ok(out)
    }

    /// One in-place Adam update of `params`.
    pub fn step(&mut self, params: &mut [Array], grads: &[Array]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", "params/grads count differ"));
        }
        let dirs = self.direction(grads)?;
        for (p, d) in params.iter_mut().zip(&dirs) {
            if p.shape() != d.shape() {
                return Err(Error::shape("adam", format!("{:?} vs {:?}", p.shape(), d.shape())));
            }
            p.add_assign(d);
        }
        Ok(())
    }
}
