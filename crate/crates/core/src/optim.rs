//! Adam and AdamW (decoupled weight decay) over parameter groups.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Only applied by AdamW.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            weight_decay,
            ..Self::adam(lr)
        }
    }
}

/// Moment buffers for one optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: OptimizerState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            state: OptimizerState::new(len),
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.state.m.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len(), self.state.m.len()],
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
        }
        self.state.step += 1;
        self.apply(params, grads, 0);
        Ok(())
    }

    fn apply(&mut self, params: &mut [T], grads: &[T], state_offset: usize) {
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let t = self.state.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let decay = match c.kind {
            OptimizerKind::AdamW => lr * T::of(c.weight_decay),
            OptimizerKind::Adam => T::zero(),
        };
        let m = &mut self.state.m[state_offset..state_offset + params.len()];
        let v = &mut self.state.v[state_offset..state_offset + params.len()];
        for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *p -= decay * *p;
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One optimizer over every slot of some parameter groups.
#[derive(Debug, Clone)]
pub struct GroupOptimizer<T> {
    groups: Vec<ParamGroup>,
    ranges: Vec<Range<usize>>,
    inner: Adam<T>,
}

impl<T: Scalar> GroupOptimizer<T> {
    pub fn new(store: &ParamStore<T>, groups: &[ParamGroup], config: AdamConfig) -> Self {
        let ranges: Vec<Range<usize>> =
            groups.iter().flat_map(|&g| store.group_ranges(g)).collect();
        let len = ranges.iter().map(|r| r.len()).sum();
        Self {
            groups: groups.to_vec(),
            ranges,
            inner: Adam::new(config, len),
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.inner.state
    }

    /// Updates the owned slots of `store` from the flat gradient `grads`.
    /// A non-finite gradient aborts before any value changes and names the slot.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[T]) -> Result<()> {
        for r in &self.ranges {
            if let Some(i) = grads[r.clone()].iter().position(|g| !g.is_finite()) {
                let idx = r.start + i;
                let slot = store.slot_of(idx).map_or("?", |s| s.name.as_str());
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter slice {slot} (flat index {idx})"
                )));
            }
        }
        self.inner.state.step += 1;
        let mut offset = 0;
        for r in &self.ranges {
            let len = r.len();
            self.inner.apply(
                &mut store.values_mut()[r.clone()],
                &grads[r.clone()],
                offset,
            );
            offset += len;
        }
        Ok(())
    }
}
