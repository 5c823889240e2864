//! Mini-batch training, evaluation and run-directory persistence.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adam::Adam;
use super::config::{lr_at, TrainConfig};
use super::metrics::{compute_metrics, MetricsReport, RankedRound};
use crate::corpus::{AnnotatedDialog, Vocabulary};
use crate::error::{GogError, Result};
use crate::model::{
    discriminative_score, fuse, generative_score, prepare_rounds, round_loss, run_gog, CandidateBank, DecoderMode,
    GogModel, RoundInput,
};
use crate::parallel;
use crate::tensor::params::named_rng;
use crate::tensor::{reduce_gradients, Checkpoint, Gradients, ParamStore, Tape};

/// Mean losses of a set of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub disc: Option<f64>,
    pub gen: Option<f64>,
    pub rounds: usize,
}

struct ChunkOut {
    grads: Gradients,
    total: f64,
    disc: f64,
    gen: f64,
}

fn chunk_pass(
    model: &GogModel,
    store: &ParamStore,
    mode: DecoderMode,
    rounds: &[&RoundInput],
    with_grads: bool,
) -> Result<ChunkOut> {
    let mut tape = Tape::new();
    let bank = if mode.uses_discriminative() {
        Some(CandidateBank::build(
            &mut tape,
            store,
            model,
            rounds.iter().map(|r| r.candidates.as_slice()),
        )?)
    } else {
        None
    };
    let mut totals = Vec::with_capacity(rounds.len());
    let (mut disc, mut gen) = (0.0, 0.0);
    for r in rounds {
        let l = round_loss(&mut tape, store, model, mode, r, bank.as_ref())?;
        disc += l.disc.map_or(0.0, |v| tape.value(v).get(0, 0));
        gen += l.gen.map_or(0.0, |v| tape.value(v).get(0, 0));
        totals.push(l.total);
    }
    let stacked = tape.concat_rows(&totals)?;
    let sum = tape.sum(stacked);
    let total = tape.value(sum).get(0, 0);
    if !total.is_finite() {
        return Err(GogError::Numerical(format!("loss is {total}")));
    }
    let grads = if with_grads { tape.backward(sum)? } else { Gradients::new() };
    Ok(ChunkOut { grads, total, disc, gen })
}

/// Gradient of the mean round loss over `rounds` and the mean losses.
/// Rounds are split into chunks of `chunk_size`, each on its own tape;
/// chunk results are reduced in order, so the outcome does not depend on
/// how many threads ran them.
pub fn batch_gradients(
    model: &GogModel,
    store: &ParamStore,
    mode: DecoderMode,
    rounds: &[&RoundInput],
    chunk_size: usize,
    with_grads: bool,
) -> Result<(Gradients, LossParts)> {
    if rounds.is_empty() {
        return Err(GogError::Validation("empty batch".into()));
    }
    let chunks: Vec<&[&RoundInput]> = rounds.chunks(chunk_size.max(1)).collect();
    let outs = parallel::map(&chunks, |c| chunk_pass(model, store, mode, c, with_grads));
    let n = rounds.len() as f64;
    let (mut total, mut disc, mut gen) = (0.0, 0.0, 0.0);
    let mut parts = Vec::with_capacity(outs.len());
    for o in outs {
        let o = o?;
        total += o.total;
        disc += o.disc;
        gen += o.gen;
        parts.push(o.grads);
    }
    let mut grads = reduce_gradients(parts);
    for g in grads.values_mut() {
        g.scale_assign(1.0 / n);
    }
    let loss = LossParts {
        total: total / n,
        disc: mode.uses_discriminative().then_some(disc / n),
        gen: mode.uses_generative().then_some(gen / n),
        rounds: rounds.len(),
    };
    Ok((grads, loss))
}

/// Mean loss over `rounds` without touching the parameters.
pub fn mean_loss(
    model: &GogModel,
    store: &ParamStore,
    mode: DecoderMode,
    rounds: &[RoundInput],
    chunk_size: usize,
) -> Result<LossParts> {
    let refs: Vec<&RoundInput> = rounds.iter().collect();
    Ok(batch_gradients(model, store, mode, &refs, chunk_size, false)?.1)
}

/// Scores, ranking and ground-truth rank of one round under one decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDump {
    pub image_id: String,
    pub round: usize,
    pub decoder: String,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub gt_index: usize,
    pub gt_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderEval {
    pub metrics: MetricsReport,
    pub dumps: Vec<RoundDump>,
}

/// Evaluation of every decoder the mode enables.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub disc: Option<DecoderEval>,
    pub gen: Option<DecoderEval>,
}

impl Evaluation {
    /// The discriminative report when present, else the generative one.
    pub fn primary(&self) -> &DecoderEval {
        self.disc
            .as_ref()
            .or(self.gen.as_ref())
            .expect("every mode enables a decoder")
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = |e: &Option<DecoderEval>| e.as_ref().map(|d| metrics_json(&d.metrics));
        json!({ "disc": m(&self.disc), "gen": m(&self.gen) })
    }
}

fn metrics_json(m: &MetricsReport) -> serde_json::Value {
    json!({
        "mrr": m.mrr, "r_at_1": m.r_at_1, "r_at_5": m.r_at_5, "r_at_10": m.r_at_10,
        "mean_rank": m.mean_rank, "ndcg": m.ndcg, "rounds": m.ranks.len(),
    })
}

type RoundScores = (Option<(Vec<f64>, Vec<usize>)>, Option<(Vec<f64>, Vec<usize>)>);

fn score_round(model: &GogModel, store: &ParamStore, mode: DecoderMode, r: &RoundInput) -> Result<RoundScores> {
    let mut tape = Tape::new();
    let state = run_gog(&mut tape, store, model, r)?;
    let fusion = fuse(&mut tape, store, model, &state)?;
    let disc = if mode.uses_discriminative() {
        let (s, _) = discriminative_score(&mut tape, store, model, fusion.joint, &r.candidates)?;
        Some((s.scores, s.ranking))
    } else {
        None
    };
    let gen = if mode.uses_generative() {
        let (s, _) = generative_score(&mut tape, store, model, fusion.joint, &r.candidates)?;
        Some((s.scores, s.ranking))
    } else {
        None
    };
    Ok((disc, gen))
}

/// Ranks every round's candidates and computes the metrics.
pub fn evaluate_rounds(
    model: &GogModel,
    store: &ParamStore,
    mode: DecoderMode,
    rounds: &[RoundInput],
) -> Result<Evaluation> {
    let scored = parallel::map(rounds, |r| score_round(model, store, mode, r));
    let mut disc = Vec::new();
    let mut gen = Vec::new();
    for (r, s) in rounds.iter().zip(scored) {
        let (d, g) = s?;
        for (out, res, name) in [(&mut disc, d, "disc"), (&mut gen, g, "gen")] {
            if let Some((scores, ranking)) = res {
                let gt_rank = 1 + ranking.iter().position(|&i| i == r.gt_index).unwrap_or(ranking.len());
                out.push(RoundDump {
                    image_id: r.image_id.clone(),
                    round: r.round,
                    decoder: name.to_string(),
                    scores,
                    ranking,
                    gt_index: r.gt_index,
                    gt_rank,
                });
            }
        }
    }
    let finish = |dumps: Vec<RoundDump>| -> Result<Option<DecoderEval>> {
        if dumps.is_empty() {
            return Ok(None);
        }
        let ranked: Vec<RankedRound> = dumps
            .iter()
            .zip(rounds)
            .map(|(d, r)| RankedRound {
                ranking: d.ranking.clone(),
                gt_index: d.gt_index,
                relevance: r.relevance.clone(),
            })
            .collect();
        Ok(Some(DecoderEval {
            metrics: compute_metrics(&ranked)?,
            dumps,
        }))
    };
    Ok(Evaluation {
        disc: finish(disc)?,
        gen: finish(gen)?,
    })
}

/// What one epoch did.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    /// Round-weighted mean of the batch losses.
    pub loss: LossParts,
    pub batches: Vec<LossParts>,
    pub val: Option<Evaluation>,
}

/// Model, parameters and optimizer state, plus the prepared rounds.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: GogModel,
    pub store: ParamStore,
    pub adam: Adam,
    /// Last completed epoch.
    pub epoch: usize,
    pub vocab: Vocabulary,
    pub train: Vec<RoundInput>,
    pub val: Vec<RoundInput>,
    run: Option<RunDir>,
}

fn region_dim(dialogs: &[AnnotatedDialog]) -> Result<usize> {
    dialogs
        .iter()
        .flat_map(|a| a.dialog.regions.first())
        .map(|r| r.feature.len())
        .next()
        .ok_or_else(|| GogError::Validation("corpus has no regions".into()))
}

impl Trainer {
    /// Fresh trainer with the vocabulary built from `train`.
    pub fn new(cfg: TrainConfig, train: &[AnnotatedDialog], val: &[AnnotatedDialog]) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocabulary::build(train, cfg.min_freq);
        let model = GogModel::new(cfg.model_config(vocab.len(), region_dim(train)?))?;
        let store = model.init_store(cfg.seed)?;
        Trainer::assemble(cfg, model, store, vocab, train, val)
    }

    fn assemble(
        cfg: TrainConfig,
        model: GogModel,
        store: ParamStore,
        vocab: Vocabulary,
        train: &[AnnotatedDialog],
        val: &[AnnotatedDialog],
    ) -> Result<Self> {
        let train = prepare_rounds(train, &vocab, &model.cfg, cfg.thresholds)?;
        let val = prepare_rounds(val, &vocab, &model.cfg, cfg.thresholds)?;
        let adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
        Ok(Trainer {
            cfg,
            model,
            store,
            adam,
            epoch: 0,
            vocab,
            train,
            val,
            run: None,
        })
    }

    /// Starts a run directory at `dir`: config snapshot, vocabulary, the
    /// epoch-0 checkpoint and an empty metrics log.
    pub fn attach_run_dir(&mut self, dir: &Path) -> Result<()> {
        let run = RunDir::create(dir)?;
        self.cfg.save(&run.config_path())?;
        self.vocab.save(&run.vocab_path())?;
        run.log(&json!({"event": "start", "seed": self.cfg.seed, "digest": self.cfg.digest(),
            "train_rounds": self.train.len(), "val_rounds": self.val.len(),
            "parameters": self.store.num_scalars(), "parallel": parallel::is_parallel()}))?;
        self.run = Some(run);
        self.save_state()
    }

    /// Reopens a run directory and restores parameters, optimizer state and
    /// epoch. `cfg` may change schedule keys but not the architecture.
    pub fn resume(dir: &Path, cfg: TrainConfig, train: &[AnnotatedDialog], val: &[AnnotatedDialog]) -> Result<Self> {
        let run = RunDir::open(dir)?;
        let ck = run.load_checkpoint(&cfg)?;
        let vocab = Vocabulary::load(&run.vocab_path())?;
        let model = GogModel::new(cfg.model_config(vocab.len(), ck_usize(&ck, "d_v")?))?;
        let epoch = ck_usize(&ck, "epoch")?;
        let mut t = Trainer::assemble(cfg, model, ck.params, vocab, train, val)?;
        t.adam = Adam::load(&run.optimizer_path())?;
        t.epoch = epoch;
        t.cfg.save(&run.config_path())?;
        run.log(&json!({"event": "resume", "epoch": epoch}))?;
        t.run = Some(run);
        Ok(t)
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run.as_ref().map(|r| r.dir.as_path())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.store.clone(), &self.cfg.digest());
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck.meta.insert("d_v".into(), self.model.cfg.d_v.to_string());
        ck.meta.insert("vocab_size".into(), self.vocab.len().to_string());
        ck.meta.insert("optimizer_step".into(), self.adam.step.to_string());
        ck
    }

    fn save_state(&self) -> Result<()> {
        if let Some(run) = &self.run {
            write_atomic(&run.optimizer_path(), &self.adam.to_checkpoint(&self.cfg.digest()).to_bytes())?;
            write_atomic(&run.checkpoint_path(), &self.checkpoint().to_bytes())?;
        }
        Ok(())
    }

    fn log(&self, v: &serde_json::Value) -> Result<()> {
        match &self.run {
            Some(run) => run.log(v),
            None => Ok(()),
        }
    }

    /// Round order of `epoch`, a pure function of seed and epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut named_rng(&format!("epoch.{epoch}"), self.cfg.seed));
        order
    }

    /// Runs the next epoch. On a non-finite loss or gradient the epoch is
    /// abandoned and the previous checkpoint stays on disk.
    pub fn train_epoch(&mut self) -> Result<EpochSummary> {
        let epoch = self.epoch + 1;
        let lr = lr_at(epoch, &self.cfg)?;
        let mode = self.cfg.decoder_mode;
        let order = self.epoch_order(epoch);
        let mut batches = Vec::new();
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let rounds: Vec<&RoundInput> = idx.iter().map(|&i| &self.train[i]).collect();
            let step = batch_gradients(&self.model, &self.store, mode, &rounds, self.cfg.chunk_size, true)
                .and_then(|(grads, loss)| {
                    let info = self.adam.update(&mut self.store, &grads, lr, self.cfg.clip_norm)?;
                    Ok((loss, info))
                });
            let (loss, info) = match step {
                Ok(s) => s,
                Err(e) => {
                    self.log(&json!({"event": "diverged", "epoch": epoch, "batch": b, "error": e.to_string()}))?;
                    return Err(e);
                }
            };
            self.log(&json!({"event": "batch", "epoch": epoch, "batch": b, "rounds": loss.rounds, "lr": lr,
                "loss": loss.total, "loss_d": loss.disc, "loss_g": loss.gen,
                "grad_norm": info.grad_norm, "clipped": info.clipped}))?;
            batches.push(loss);
        }
        let n: usize = batches.iter().map(|b| b.rounds).sum();
        let weighted = |f: &dyn Fn(&LossParts) -> Option<f64>| -> Option<f64> {
            let parts: Option<Vec<f64>> = batches.iter().map(|b| f(b).map(|v| v * b.rounds as f64)).collect();
            parts.map(|p| p.iter().sum::<f64>() / n as f64)
        };
        let loss = LossParts {
            total: weighted(&|b| Some(b.total)).unwrap_or(f64::NAN),
            disc: weighted(&|b| b.disc),
            gen: weighted(&|b| b.gen),
            rounds: n,
        };
        self.epoch = epoch;
        let val = if self.cfg.eval_every > 0 && epoch % self.cfg.eval_every == 0 && !self.val.is_empty() {
            Some(evaluate_rounds(&self.model, &self.store, mode, &self.val)?)
        } else {
            None
        };
        self.log(&json!({"event": "epoch", "epoch": epoch, "lr": lr, "loss": loss.total,
            "loss_d": loss.disc, "loss_g": loss.gen, "val": val.as_ref().map(Evaluation::to_json)}))?;
        self.save_state()?;
        Ok(EpochSummary {
            epoch,
            lr,
            loss,
            batches,
            val,
        })
    }

    /// Trains until `max_epochs`, calling `on_epoch` after each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<()> {
        while self.epoch < self.cfg.max_epochs {
            let s = self.train_epoch()?;
            on_epoch(&s);
        }
        Ok(())
    }

    pub fn evaluate(&self, rounds: &[RoundInput], mode: DecoderMode) -> Result<Evaluation> {
        evaluate_rounds(&self.model, &self.store, mode, rounds)
    }

    pub fn mean_loss(&self, rounds: &[RoundInput]) -> Result<LossParts> {
        mean_loss(&self.model, &self.store, self.cfg.decoder_mode, rounds, self.cfg.chunk_size)
    }
}

fn ck_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| GogError::Checkpoint(format!("checkpoint metadata lacks `{key}`")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| GogError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GogError::io(path, e))
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| GogError::io(dir, e))?;
        let run = RunDir { dir: dir.to_path_buf() };
        fs::write(run.log_path(), "").map_err(|e| GogError::io(run.log_path(), e))?;
        Ok(run)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let run = RunDir { dir: dir.to_path_buf() };
        if !run.checkpoint_path().is_file() {
            return Err(GogError::Checkpoint(format!(
                "{} holds no checkpoint",
                dir.display()
            )));
        }
        Ok(run)
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join("config.txt")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }

    pub fn optimizer_path(&self) -> PathBuf {
        self.dir.join("optimizer.bin")
    }

    pub fn dump_path(&self, split: &str, decoder: &str) -> PathBuf {
        self.dir.join("dumps").join(format!("{split}.{decoder}.jsonl"))
    }

    pub fn log(&self, v: &serde_json::Value) -> Result<()> {
        let path = self.log_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GogError::io(&path, e))?;
        writeln!(f, "{v}").map_err(|e| GogError::io(&path, e))
    }

    /// Loads the checkpoint, refusing it when its digest differs from `cfg`'s.
    pub fn load_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let ck = Checkpoint::load(&self.checkpoint_path())?;
        let current = cfg.digest();
        if ck.config_digest() != current {
            return Err(GogError::DigestMismatch {
                checkpoint: ck.config_digest().to_string(),
                current,
            });
        }
        Ok(ck)
    }

    pub fn write_dumps(&self, split: &str, eval: &Evaluation) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for d in [&eval.disc, &eval.gen].into_iter().flatten() {
            let Some(first) = d.dumps.first() else { continue };
            let path = self.dump_path(split, &first.decoder);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| GogError::io(parent, e))?;
            }
            let mut text = String::new();
            for r in &d.dumps {
                text.push_str(&serde_json::to_string(r).map_err(|e| GogError::Validation(e.to_string()))?);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| GogError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Model and parameters restored from a run directory for evaluation.
pub struct LoadedRun {
    pub cfg: TrainConfig,
    pub model: GogModel,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub epoch: usize,
    pub run: RunDir,
}

impl LoadedRun {
    /// Opens `dir` under `cfg`; the config snapshot of the run is used when
    /// `cfg` is `None`.
    pub fn open(dir: &Path, cfg: Option<TrainConfig>) -> Result<Self> {
        let run = RunDir::open(dir)?;
        let cfg = match cfg {
            Some(c) => c,
            None => TrainConfig::load(&run.config_path())?,
        };
        let ck = run.load_checkpoint(&cfg)?;
        let vocab = Vocabulary::load(&run.vocab_path())?;
        let model = GogModel::new(cfg.model_config(vocab.len(), ck_usize(&ck, "d_v")?))?;
        Ok(LoadedRun {
            epoch: ck_usize(&ck, "epoch")?,
            cfg,
            model,
            store: ck.params,
            vocab,
            run,
        })
    }

    pub fn rounds(&self, dialogs: &[AnnotatedDialog]) -> Result<Vec<RoundInput>> {
        prepare_rounds(dialogs, &self.vocab, &self.model.cfg, self.cfg.thresholds)
    }

    pub fn evaluate(&self, rounds: &[RoundInput], mode: DecoderMode) -> Result<Evaluation> {
        evaluate_rounds(&self.model, &self.store, mode, rounds)
    }
}
