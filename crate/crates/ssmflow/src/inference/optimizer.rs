//! AdaMax optimiser and global-L1 gradient clipping.

use crate::diffcore::{GradMap, ParameterStore, Tensor};
use crate::error::{Error, Result};

const U_FLOOR: f64 = 1e-8;

/// AdaMax: first-moment EMA plus an infinity-norm accumulator, chosen for
/// robustness to occasional large gradient estimates.
#[derive(Debug, Clone)]
pub struct AdaMax {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
    t: u64,
}

impl AdaMax {
    pub fn new(store: &ParameterStore, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let shapes: Vec<Tensor> = (0..store.len())
            .map(|i| Tensor::zeros(store.value_at(i).shape()))
            .collect();
        AdaMax {
            learning_rate,
            beta1,
            beta2,
            m: shapes.clone(),
            u: shapes,
            t: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    /// One descent step: m ← β₁m + (1-β₁)g, u ← max(β₂u, |g|),
    /// w ← w - (lr/(1-β₁ᵗ)) · m/u with u floored at 1e-8.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &GradMap) {
        self.t += 1;
        let correction = self.learning_rate / (1.0 - self.beta1.powi(self.t as i32));
        for idx in store.learnable_indices() {
            let name = store.name_at(idx).to_string();
            let g = grads.entry(idx);
            let m = &mut self.m[idx];
            let u = &mut self.u[idx];
            for ((mv, uv), gv) in m
                .data_mut()
                .iter_mut()
                .zip(u.data_mut().iter_mut())
                .zip(g.data())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *uv = (self.beta2 * *uv).max(gv.abs());
            }
            let w = store.value_mut(&name).expect("known name");
            for ((wv, mv), uv) in w.data_mut().iter_mut().zip(m.data()).zip(u.data()) {
                *wv -= correction * mv / uv.max(U_FLOOR);
            }
        }
    }
}

/// Scale all gradients so the global L1 norm does not exceed `threshold`.
/// Returns the pre-clip norm.
pub fn clip_global_l1(
    grads: &mut GradMap,
    store: &ParameterStore,
    threshold: f64,
) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::Config("clip threshold must be > 0".into()));
    }
    let norm = grads.global_l1(store);
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    Ok(norm)
}
