//! SGD with Nesterov momentum and bias-corrected ADAM.
//!
//! Both optimizers accept an optional keep map over all parameters. Entries
//! with a clear flag receive no update and are written back as exactly zero,
//! which is how pruned children stay pruned during tuning.

use std::sync::Arc;

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamLayout, ParameterStore};

/// Either optimizer behind one interface for the training loop.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(
        &mut self,
        store: &mut ParameterStore<f32>,
        grads: &Gradients<f32>,
        keep: Option<&BitSet>,
        lr: f64,
    ) -> Result<()> {
        match self {
            Optimizer::Sgd(s) => s.step(store, grads, keep, lr),
            Optimizer::Adam(a) => a.step(store, grads, keep, lr),
        }
    }
}

fn check(
    layout: &Arc<ParamLayout>,
    store: &ParameterStore<f32>,
    grads: &Gradients<f32>,
    keep: Option<&BitSet>,
    lr: f64,
) -> Result<()> {
    store.check_mirrors(grads)?;
    if store.layout() != layout {
        return Err(Error::Structure(
            "optimizer state was built for a different parameter layout".into(),
        ));
    }
    if let Some(k) = keep {
        if k.len() != store.len() {
            return Err(Error::Structure(format!(
                "keep map has {} flags for {} parameters",
                k.len(),
                store.len()
            )));
        }
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid learning rate {lr}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SgdState {
    pub momentum: f32,
    pub weight_decay: f32,
    layout: Arc<ParamLayout>,
    decay_mask: Vec<bool>,
    velocity: Vec<f32>,
}

impl SgdState {
    pub const DEFAULT_MOMENTUM: f32 = 0.9;
    pub const DEFAULT_WEIGHT_DECAY: f32 = 5e-4;

    pub fn new(layout: Arc<ParamLayout>, momentum: f32, weight_decay: f32) -> Self {
        SgdState {
            momentum,
            weight_decay,
            decay_mask: layout.weight_flags(),
            velocity: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn velocity(&self) -> &[f32] {
        &self.velocity
    }

    /// `g ← g + γw` (weights only), `v ← μv + g`, `w ← w − lr·(g + μv)`.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<f32>,
        grads: &Gradients<f32>,
        keep: Option<&BitSet>,
        lr: f64,
    ) -> Result<()> {
        check(&self.layout, store, grads, keep, lr)?;
        let lr = lr as f32;
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (i, (w, &g)) in store.values_mut().iter_mut().zip(grads.values()).enumerate() {
            if keep.is_some_and(|k| !k.get(i)) {
                *w = 0.0;
                self.velocity[i] = 0.0;
                continue;
            }
            let g = if self.decay_mask[i] { g + wd * *w } else { g };
            let v = mu * self.velocity[i] + g;
            self.velocity[i] = v;
            *w -= lr * (g + mu * v);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f32,
    layout: Arc<ParamLayout>,
    decay_mask: Vec<bool>,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

impl AdamState {
    pub fn new(layout: Arc<ParamLayout>) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_mask: layout.weight_flags(),
            m: vec![0.0; layout.total()],
            v: vec![0.0; layout.total()],
            step: 0,
            layout,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f32) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        store: &mut ParameterStore<f32>,
        grads: &Gradients<f32>,
        keep: Option<&BitSet>,
        lr: f64,
    ) -> Result<()> {
        check(&self.layout, store, grads, keep, lr)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (eps, wd) = (self.eps, self.weight_decay as f64);
        for (i, (w, &g)) in store.values_mut().iter_mut().zip(grads.values()).enumerate() {
            if keep.is_some_and(|k| !k.get(i)) {
                *w = 0.0;
                self.m[i] = 0.0;
                self.v[i] = 0.0;
                continue;
            }
            let wv = *w as f64;
            let g = g as f64 + if wd != 0.0 && self.decay_mask[i] { wd * wv } else { 0.0 };
            let m = b1 * self.m[i] as f64 + (1.0 - b1) * g;
            let v = b2 * self.v[i] as f64 + (1.0 - b2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            *w = (wv - lr * (m / bc1) / ((v / bc2).sqrt() + eps)) as f32;
        }
        Ok(())
    }
}
