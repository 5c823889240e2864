//! Adam with bias correction and global-norm gradient clipping.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{GogError, Result};
use crate::tensor::{Checkpoint, Gradients, Matrix, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

/// Outcome of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// L2 norm over every entry of `grads`.
pub fn global_norm(grads: &Gradients) -> f64 {
    grads.values().map(Matrix::sq_norm).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update with learning rate `lr`. Gradients are rescaled
    /// to norm `clip` first when larger; `clip = 0` disables that.
    /// Frozen and unknown names are rejected or skipped before any change.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64, clip: f64) -> Result<StepInfo> {
        let grad_norm = global_norm(grads);
        if !grad_norm.is_finite() {
            return Err(GogError::Numerical(format!("gradient norm is {grad_norm}")));
        }
        for (name, g) in grads {
            let p = store.get(name)?;
            if p.value.shape() != g.shape() {
                return Err(GogError::dim("adam", p.value.shape_str(), g.shape_str()));
            }
        }
        let clipped = clip > 0.0 && grad_norm > clip;
        let scale = if clipped { clip / grad_norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            if !p.trainable {
                continue;
            }
            let (rows, cols) = g.shape();
            let m = self.m.entry(name.clone()).or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v.entry(name.clone()).or_insert_with(|| Matrix::zeros(rows, cols));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let values = p.value.data_mut();
            for (((w, &gi), mi), vi) in values
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gi = gi * scale;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(StepInfo { grad_norm, clipped })
    }

    /// Moments as a checkpoint: `m.{name}` and `v.{name}` entries, with the
    /// step count and hyperparameters in the metadata.
    pub fn to_checkpoint(&self, config_digest: &str) -> Checkpoint {
        let mut store = ParamStore::new(0);
        for (k, m) in &self.m {
            store.insert(&format!("m.{k}"), m.clone(), false);
        }
        for (k, v) in &self.v {
            store.insert(&format!("v.{k}"), v.clone(), false);
        }
        let mut ck = Checkpoint::new(store, config_digest);
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert("beta1".into(), self.beta1.to_string());
        ck.meta.insert("beta2".into(), self.beta2.to_string());
        ck.meta.insert("eps".into(), self.eps.to_string());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let num = |k: &str| -> Result<f64> {
            ck.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| GogError::Checkpoint(format!("optimizer state lacks `{k}`")))
        };
        let mut adam = Adam::new(num("beta1")?, num("beta2")?, num("eps")?);
        adam.step = num("step")? as u64;
        for (name, p) in ck.params.iter() {
            if let Some(k) = name.strip_prefix("m.") {
                adam.m.insert(k.to_string(), p.value.clone());
            } else if let Some(k) = name.strip_prefix("v.") {
                adam.v.insert(k.to_string(), p.value.clone());
            } else {
                return Err(GogError::Checkpoint(format!("unexpected optimizer entry `{name}`")));
            }
        }
        Ok(adam)
    }

    pub fn save(&self, path: &Path, config_digest: &str) -> Result<()> {
        self.to_checkpoint(config_digest).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Adam::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("w", Matrix::row_vector(&[1.0, -2.0]), true);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::row_vector(&[0.5, -3.0]));
        let info = adam.update(&mut s, &g, 0.1, 0.0).unwrap();
        assert!(!info.clipped);
        let w = s.value("w").unwrap().data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn clipping_scales_to_ceiling() {
        let mut s = store();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::row_vector(&[30.0, 40.0]));
        let info = adam.update(&mut s, &g, 0.1, 5.0).unwrap();
        assert!(info.clipped);
        assert_eq!(info.grad_norm, 50.0);
    }

    #[test]
    fn non_finite_gradient_leaves_store_alone() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::row_vector(&[f64::NAN, 0.0]));
        assert!(matches!(adam.update(&mut s, &g, 0.1, 5.0), Err(GogError::Numerical(_))));
        assert_eq!(s, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn state_round_trip() {
        let mut s = store();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::row_vector(&[0.3, 0.1]));
        adam.update(&mut s, &g, 0.01, 5.0).unwrap();
        let back = Adam::from_checkpoint(&Checkpoint::from_bytes(&adam.to_checkpoint("x").to_bytes()).unwrap()).unwrap();
        assert_eq!(back, adam);
    }
}
