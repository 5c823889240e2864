//! Training configuration, its flat `key = value` file format and the
//! learning-rate schedule.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::LengthLimits;
use crate::error::{GogError, Result};
use crate::graphs::SpatialThresholds;
use crate::model::{Ablations, DecoderMode, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub peak_lr: f64,
    pub warmup_end_epoch: usize,
    pub decay_start_epoch: usize,
    pub decay_every: usize,
    /// Multiplier applied every `decay_every` epochs after `decay_start_epoch`.
    /// 0.25 reads "decreased by 1/4" as `lr × 1/4`; 0.75 as `lr − lr/4`.
    pub decay_factor: f64,
    pub max_epochs: usize,
    pub heads: usize,
    pub hidden: usize,
    pub word_dim: usize,
    pub seed: u64,
    pub decoder_mode: DecoderMode,
    pub ablations: Ablations,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Rounds per gradient tape. Chunks of a batch run in parallel and are
    /// reduced in order.
    pub chunk_size: usize,
    pub min_freq: usize,
    pub caption_len: usize,
    pub question_len: usize,
    pub answer_len: usize,
    pub thresholds: SpatialThresholds,
    /// Evaluate on the held-out split every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            base_lr: 1e-4,
            peak_lr: 2e-4,
            warmup_end_epoch: 4,
            decay_start_epoch: 15,
            decay_every: 2,
            decay_factor: 0.25,
            max_epochs: 20,
            heads: 4,
            hidden: 64,
            word_dim: 64,
            seed: 1,
            decoder_mode: DecoderMode::Discriminative,
            ablations: Ablations::none(),
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            chunk_size: 8,
            min_freq: 1,
            caption_len: 40,
            question_len: 20,
            answer_len: 20,
            thresholds: SpatialThresholds::default(),
            eval_every: 1,
        }
    }
}

/// Keys that change the network or its inputs. A checkpoint is only usable
/// under a configuration whose digest over these keys matches.
const ARCHITECTURE_KEYS: [&str; 10] = [
    "hidden",
    "word_dim",
    "heads",
    "ablations",
    "min_freq",
    "caption_len",
    "question_len",
    "answer_len",
    "iou",
    "dist",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| GogError::Config(format!("{key} = {value}: {e}")))
}

impl TrainConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("peak_lr", self.peak_lr.to_string()),
            ("warmup_end_epoch", self.warmup_end_epoch.to_string()),
            ("decay_start_epoch", self.decay_start_epoch.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("heads", self.heads.to_string()),
            ("hidden", self.hidden.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("seed", self.seed.to_string()),
            ("decoder_mode", self.decoder_mode.name().to_string()),
            ("ablations", self.ablations.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("chunk_size", self.chunk_size.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("caption_len", self.caption_len.to_string()),
            ("question_len", self.question_len.to_string()),
            ("answer_len", self.answer_len.to_string()),
            ("iou", self.thresholds.iou.to_string()),
            ("dist", self.thresholds.dist.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "batch_size" => self.batch_size = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "peak_lr" => self.peak_lr = parse(key, value)?,
            "warmup_end_epoch" => self.warmup_end_epoch = parse(key, value)?,
            "decay_start_epoch" => self.decay_start_epoch = parse(key, value)?,
            "decay_every" => self.decay_every = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "decoder_mode" => self.decoder_mode = parse(key, value)?,
            "ablations" => self.ablations = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "chunk_size" => self.chunk_size = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "caption_len" => self.caption_len = parse(key, value)?,
            "question_len" => self.question_len = parse(key, value)?,
            "answer_len" => self.answer_len = parse(key, value)?,
            "iou" => self.thresholds.iou = parse(key, value)?,
            "dist" => self.thresholds.dist = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            other => return Err(GogError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Flat text: one `key = value` per line, `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies the lines of `text` on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GogError::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GogError::io(path, e))?;
        TrainConfig::parse_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| GogError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GogError::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr <= self.peak_lr && self.peak_lr.is_finite()) {
            return err(format!(
                "learning rates must satisfy 0 < base_lr <= peak_lr, got {} and {}",
                self.base_lr, self.peak_lr
            ));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("warmup_end_epoch", self.warmup_end_epoch),
            ("decay_start_epoch", self.decay_start_epoch),
            ("decay_every", self.decay_every),
            ("max_epochs", self.max_epochs),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("chunk_size", self.chunk_size),
            ("min_freq", self.min_freq),
            ("caption_len", self.caption_len),
            ("question_len", self.question_len),
            ("answer_len", self.answer_len),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return err(format!("{k} must be positive"));
        }
        if self.decay_start_epoch < self.warmup_end_epoch {
            return err("decay_start_epoch must not precede warmup_end_epoch".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return err(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if !(self.clip_norm >= 0.0) {
            return err(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return err("Adam needs 0 <= beta < 1 and eps > 0".into());
        }
        if self.hidden % self.heads != 0 {
            return err(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads));
        }
        Ok(())
    }

    /// SHA-256 over the architecture keys, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if ARCHITECTURE_KEYS.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn limits(&self) -> LengthLimits {
        LengthLimits {
            caption: self.caption_len,
            question: self.question_len,
            answer: self.answer_len,
        }
    }

    pub fn model_config(&self, vocab_size: usize, d_v: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_word: self.word_dim,
            d_v,
            hidden: self.hidden,
            heads: self.heads,
            caption_len: self.caption_len,
            question_len: self.question_len,
            answer_len: self.answer_len,
            ablations: self.ablations.clone(),
        }
    }
}

/// Learning rate for a 1-based `epoch`: linear warmup from `base_lr` at
/// epoch 1 to `peak_lr` at `warmup_end_epoch`, flat through
/// `decay_start_epoch`, then one `decay_factor` step per `decay_every`
/// further epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.max_epochs {
        return Err(GogError::Config(format!(
            "epoch {epoch} is outside 1..={}",
            cfg.max_epochs
        )));
    }
    if epoch < cfg.warmup_end_epoch {
        let span = (cfg.warmup_end_epoch - 1) as f64;
        let frac = (epoch - 1) as f64 / span;
        return Ok(cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * frac);
    }
    if epoch <= cfg.decay_start_epoch {
        return Ok(cfg.peak_lr);
    }
    let steps = (epoch - cfg.decay_start_epoch) / cfg.decay_every;
    Ok(cfg.peak_lr * cfg.decay_factor.powi(steps as i32))
}
