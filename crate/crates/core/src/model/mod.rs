//! The encoder chain, fusion and both answer decoders.

pub mod config;
pub mod decoders;
pub mod encoder;
pub mod fusion;
pub mod graph_att;
pub mod input;

pub use config::{Ablation, Ablations, DecoderMode, ModelConfig, Stage};
pub use decoders::{
    discriminative_logits, discriminative_loss, CandidateBank, discriminative_score, encode_candidates, generative_log_likelihoods,
    generative_loss, generative_score, multitask_loss, rank_scores, CandidateScores,
};
pub use encoder::{
    effective_graphs, encode_features, history_aware_question_step, history_graph_step, question_aware_image_step,
    run_gog, AwareStep, EncodedDialog, GoGState,
};
pub use fusion::{cross_attend, fuse, FusionOutput};
pub use graph_att::{attention_weights, graph_att, multi_head_config, relation_scores, GraphAttOutput, GraphAttParams};
pub use input::{prepare_rounds, RoundInput};

use crate::error::Result;
use crate::graphs::GraphKind;
use crate::tensor::{register_layer_norm, register_linear, Init, LstmLayer, ParamStore, Tape, Var};

/// Fixed parameter layout of the network for a given configuration.
#[derive(Debug, Clone)]
pub struct GogModel {
    pub cfg: ModelConfig,
    pub question_lstm: LstmLayer,
    pub history_lstm: LstmLayer,
    pub answer_lstm: LstmLayer,
    pub decoder_lstm: [LstmLayer; 2],
    pub history_gat: GraphAttParams,
    pub question_gat: GraphAttParams,
    pub image_gat: GraphAttParams,
}

pub const EMBEDDING: &str = "embed";
/// Modalities of the fusion block in concatenation order.
pub const MODALITIES: [&str; 3] = ["q", "h", "v"];

impl GogModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (e, d) = (cfg.d_word, cfg.hidden);
        Ok(GogModel {
            question_lstm: LstmLayer::new("question.lstm", e, d),
            history_lstm: LstmLayer::new("history.lstm", e, d),
            answer_lstm: LstmLayer::new("disc.lstm", e, d),
            decoder_lstm: [LstmLayer::new("gen.lstm0", e, d), LstmLayer::new("gen.lstm1", d, d)],
            history_gat: multi_head_config("history.gat", d, cfg.heads, GraphKind::History.n_labels())?,
            question_gat: multi_head_config("question.gat", d, cfg.heads, GraphKind::Question.n_labels())?,
            image_gat: multi_head_config("image.gat", d, cfg.heads, GraphKind::Image.n_labels())?,
            cfg,
        })
    }

    /// Registers every parameter, whatever the ablation flags, so stores of
    /// ablated and full models share names and initial values.
    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        let (e, d, v) = (self.cfg.d_word, self.cfg.hidden, self.cfg.vocab_size);
        store.register(EMBEDDING, v, e, Init::Uniform { fan_in: e })?;
        self.question_lstm.register(store)?;
        self.history_lstm.register(store)?;
        self.answer_lstm.register(store)?;
        for l in &self.decoder_lstm {
            l.register(store)?;
        }
        register_linear(store, "image.proj", self.cfg.d_v, d, true)?;
        self.history_gat.register(store)?;
        self.question_gat.register(store)?;
        self.image_gat.register(store)?;
        for p in ["history.pool", "question.pool"] {
            store.register(&format!("{p}.w2"), d, d, Init::Uniform { fan_in: d })?;
            store.register(&format!("{p}.w1"), d, 1, Init::Uniform { fan_in: d })?;
        }
        register_linear(store, "question.aware", 2 * d, d, true)?;
        register_linear(store, "image.aware", 2 * d, d, true)?;
        for x in MODALITIES {
            for s in MODALITIES {
                for m in ["q", "k", "v", "o"] {
                    store.register(&format!("fuse.{x}.from_{s}.{m}"), d, d, Init::Uniform { fan_in: d })?;
                }
            }
            store.register(&format!("fuse.{x}.proj"), 3 * d, d, Init::Uniform { fan_in: 3 * d })?;
            register_layer_norm(store, &format!("fuse.{x}.ln"), d)?;
            store.register(&format!("fuse.{x}.pool.w2"), d, d, Init::Uniform { fan_in: d })?;
            store.register(&format!("fuse.{x}.pool.w1"), d, 1, Init::Uniform { fan_in: d })?;
        }
        store.register("fuse.joint", 3 * d, d, Init::Uniform { fan_in: 3 * d })?;
        for k in 0..2 {
            register_linear(store, &format!("gen.init{k}"), d, d, true)?;
        }
        register_linear(store, "gen.out", d, v, true)
    }

    /// Fresh store initialized from `seed`.
    pub fn init_store(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new(seed);
        self.register(&mut store)?;
        Ok(store)
    }
}

/// Loss nodes of one round.
pub struct RoundLoss {
    /// `L_D + L_G` over the decoders enabled by the mode.
    pub total: Var,
    pub disc: Option<Var>,
    pub gen: Option<Var>,
    pub state: GoGState,
    pub fusion: FusionOutput,
}

/// Forward pass and training loss of one round. `bank` must hold the
/// round's candidates when the discriminative decoder is enabled; without
/// one a private bank is encoded.
pub fn round_loss(
    tape: &mut Tape,
    store: &ParamStore,
    model: &GogModel,
    mode: DecoderMode,
    input: &RoundInput,
    bank: Option<&CandidateBank>,
) -> Result<RoundLoss> {
    let state = run_gog(tape, store, model, input)?;
    let fusion = fuse(tape, store, model, &state)?;
    let disc = if mode.uses_discriminative() {
        let own;
        let bank = match bank {
            Some(b) => b,
            None => {
                own = CandidateBank::build(tape, store, model, [input.candidates.as_slice()])?;
                &own
            }
        };
        let rows = bank.gather(tape, &input.candidates)?;
        let logits = discriminative_logits(tape, rows, fusion.joint)?;
        Some(discriminative_loss(tape, logits, input.gt_index)?)
    } else {
        None
    };
    let gen = if mode.uses_generative() {
        let answer = &input.candidates[input.gt_index];
        Some(generative_loss(tape, store, model, fusion.joint, answer)?)
    } else {
        None
    };
    let total = match (disc, gen) {
        (Some(d), Some(g)) => tape.add(d, g)?,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => unreachable!("every mode enables a decoder"),
    };
    Ok(RoundLoss {
        total,
        disc,
        gen,
        state,
        fusion,
    })
}
