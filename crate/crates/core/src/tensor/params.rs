//! Named trainable parameters with gradient slots.
//!
//! Initialization is a pure function of `(name, shape, seed)`: every entry
//! draws from its own ChaCha stream keyed by a SHA-256 of the seed and the
//! name, so registering parameters in a different order yields the same
//! values.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use crate::error::{GogError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub trainable: bool,
}

/// Sparse gradient set keyed by parameter name, as produced by one backward pass.
pub type Gradients = BTreeMap<String, Matrix>;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    seed: u64,
}

pub fn init_matrix(name: &str, rows: usize, cols: usize, init: Init, seed: u64) -> Matrix {
    match init {
        Init::Zeros => Matrix::zeros(rows, cols),
        Init::Ones => Matrix::filled(rows, cols, 1.0),
        Init::Uniform { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut rng = named_rng(name, seed);
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("shape is consistent by construction")
        }
    }
}

pub(crate) fn named_rng(name: &str, seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers `name` if absent. Re-registering with the same shape is a no-op.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<()> {
        if let Some(existing) = self.entries.get(name) {
            if existing.value.shape() != (rows, cols) {
                return Err(GogError::Config(format!(
                    "parameter `{name}` already registered as {} (requested {rows}x{cols})",
                    existing.value.shape_str()
                )));
            }
            return Ok(());
        }
        let value = init_matrix(name, rows, cols, init, self.seed);
        self.insert(name, value, true);
        Ok(())
    }

    /// Inserts or replaces an entry, resetting its gradient.
    pub fn insert(&mut self, name: &str, value: Matrix, trainable: bool) {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                grad,
                trainable,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| GogError::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| GogError::Config(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.get(name)?.value)
    }

    /// Overwrites a value in place, e.g. to load pretrained word vectors.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(GogError::dim("set_value", p.value.shape_str(), value.shape_str()));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries
            .values()
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if p.grad.shape() != g.shape() {
                return Err(GogError::dim("accumulate", p.grad.shape_str(), g.shape_str()));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    /// L2 norm over all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.grad.sq_norm())
            .sum::<f64>()
            .sqrt()
    }
}

/// Sums per-chunk gradient sets in the order given. The order is fixed by the
/// caller so parallel and sequential runs reduce identically.
pub fn reduce_gradients(parts: Vec<Gradients>) -> Gradients {
    let mut out = Gradients::new();
    for part in parts {
        for (name, g) in part {
            match out.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    out.insert(name, g);
                }
            }
        }
    }
    out
}
