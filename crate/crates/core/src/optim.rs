//! AdamW with decoupled weight decay and optional global-norm clipping.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::params::{ParamId, ParamStore};
use crate::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to matrices only (not gains or biases).
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2, clip_norm: Some(1.0) }
    }
}

/// Moment buffers are keyed by parameter name so that they survive
/// insertions and removals in the store.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, moments: BTreeMap::new() }
    }

    /// One update of every trainable parameter present in `grads`.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<ParamId, Tensor<T>>, lr: f64) -> Result<f64> {
        let mut sq = 0.0f64;
        for g in grads.values() {
            sq += g.data().iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        let norm = libm::sqrt(sq);
        if !norm.is_finite() {
            bail!(Numerical, "non-finite gradient norm at optimizer step {}", self.step + 1);
        }
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.eps);
        let clip = T::from_f64(clip);
        for (&id, g) in grads {
            let entry = params.entry(id);
            if !entry.trainable {
                continue;
            }
            let decay = if entry.value.rank() >= 2 { T::from_f64(1.0 - lr * c.weight_decay) } else { T::one() };
            let name = entry.name.clone();
            let shape = entry.value.shape().to_vec();
            if g.shape() != shape.as_slice() {
                bail!(Shape, "gradient {:?} for {} of shape {:?}", g.shape(), name, shape);
            }
            let (m, v) = self.moments.entry(name).or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
            let w = params.value_mut(id);
            for (((w, &g), m), v) in w.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g * clip;
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                let denom = (*v * inv_bc2).sqrt() + eps;
                *w = *w * decay - step_size * *m / denom;
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.insert("w", Tensor::full(&[3], 1.0), true).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert(id, Tensor::new(alloc::vec![3], alloc::vec![0.5, -2.0, 0.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig { clip_norm: None, weight_decay: 0.0, ..AdamWConfig::default() });
        opt.step(&mut ps, &grads, 0.1).unwrap();
        let w = ps.value(id).data();
        // bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 1.1).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn frozen_and_decay() {
        let mut ps = ParamStore::<f64>::new();
        let a = ps.insert("a", Tensor::full(&[2, 2], 1.0), false).unwrap();
        let b = ps.insert("b", Tensor::full(&[2, 2], 1.0), true).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert(a, Tensor::full(&[2, 2], 1.0));
        grads.insert(b, Tensor::zeros(&[2, 2]));
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() });
        opt.step(&mut ps, &grads, 0.1).unwrap();
        assert!(ps.value(a).data().iter().all(|&v| v == 1.0));
        assert!(ps.value(b).data().iter().all(|&v| (v - 0.95).abs() < 1e-12));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.insert("x", Tensor::full(&[1], 5.0), true).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, clip_norm: None, ..AdamWConfig::default() });
        for _ in 0..500 {
            let x = ps.value(id).data()[0];
            let mut g = BTreeMap::new();
            g.insert(id, Tensor::full(&[1], 2.0 * (x - 2.0)));
            opt.step(&mut ps, &g, 0.05).unwrap();
        }
        assert!((ps.value(id).data()[0] - 2.0).abs() < 1e-2);
    }
}
