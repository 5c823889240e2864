//! Training schedule, optimizer, retrieval metrics and run persistence.

pub mod adam;
pub mod config;
pub mod metrics;
pub mod trainer;

pub use adam::{global_norm, Adam, StepInfo};
pub use config::{lr_at, TrainConfig};
pub use metrics::{compute_metrics, ndcg_at_relevant, uniform_rank_mrr, MetricsReport, RankedRound};
pub use trainer::{
    batch_gradients, evaluate_rounds, mean_loss, DecoderEval, EpochSummary, Evaluation, LoadedRun, LossParts,
    RoundDump, RunDir, Trainer,
};

use crate::corpus::{generate_toy_corpus, ToyConfig, Vocabulary};
use crate::error::Result;
use crate::graphs::SpatialThresholds;
use crate::model::{prepare_rounds, round_loss, Ablations, DecoderMode, GogModel, ModelConfig};
use crate::tensor::{check_gradients, GradCheckReport};

/// Sizes of the full-chain gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckDims {
    pub regions: usize,
    pub question_len: usize,
    /// History turns, so the checked round is `turns - 1`.
    pub turns: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl GradCheckDims {
    pub const TOY: GradCheckDims = GradCheckDims {
        regions: 5,
        question_len: 6,
        turns: 3,
        hidden: 8,
        heads: 2,
    };
}

/// Finite-difference check of the whole network on one generated round:
/// graphs, the three graph attentions, fusion and the sum of both decoder
/// losses.
pub fn full_chain_grad_check(dims: GradCheckDims, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let toy = generate_toy_corpus(&ToyConfig {
        seed,
        n_dialogs: 1,
        turns: dims.turns,
        n_regions: dims.regions,
        d_v: dims.hidden,
        ..ToyConfig::default()
    })?;
    let vocab = Vocabulary::build(&toy.dialogs, 1);
    let model = GogModel::new(ModelConfig {
        vocab_size: vocab.len(),
        d_word: dims.hidden,
        d_v: dims.hidden,
        hidden: dims.hidden,
        heads: dims.heads,
        caption_len: 40,
        question_len: dims.question_len,
        answer_len: 20,
        ablations: Ablations::none(),
    })?;
    let store = model.init_store(seed)?;
    let rounds = prepare_rounds(&toy.dialogs, &vocab, &model.cfg, SpatialThresholds::default())?;
    let round = &rounds[dims.turns - 1];
    check_gradients(
        |s, tape| Ok(round_loss(tape, s, &model, DecoderMode::Multi, round, None)?.total),
        &store,
        epsilon,
    )
}
