use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{GogError, Result};

/// One switch reproducing a row of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    /// Skip graph attention over image regions.
    ImageGraph,
    QuestionGraph,
    HistoryGraph,
    /// Do not concatenate the pooled question onto region features.
    QuestionAware,
    /// Do not concatenate the pooled history onto question tokens.
    HistoryAware,
    /// Fully connected unlabeled image graph.
    SpatialRelation,
    DependencyRelation,
    CoreferenceRelation,
}

/// Intermediate activations of the encoder in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    History,
    HistoryStar,
    HistoryPooled,
    Question,
    QuestionPrime,
    QuestionStar,
    QuestionPooled,
    Image,
    ImagePrime,
    ImageStar,
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::History,
        Stage::HistoryStar,
        Stage::HistoryPooled,
        Stage::Question,
        Stage::QuestionPrime,
        Stage::QuestionStar,
        Stage::QuestionPooled,
        Stage::Image,
        Stage::ImagePrime,
        Stage::ImageStar,
        Stage::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::History => "h",
            Stage::HistoryStar => "h_star",
            Stage::HistoryPooled => "h_hat",
            Stage::Question => "q",
            Stage::QuestionPrime => "q_prime",
            Stage::QuestionStar => "q_star",
            Stage::QuestionPooled => "q_hat",
            Stage::Image => "v",
            Stage::ImagePrime => "v_prime",
            Stage::ImageStar => "v_star",
            Stage::Joint => "joint",
        }
    }

    /// Stages read directly when computing this one.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::History | Stage::Question | Stage::Image => &[],
            Stage::HistoryStar => &[Stage::History],
            Stage::HistoryPooled => &[Stage::HistoryStar],
            Stage::QuestionPrime => &[Stage::Question, Stage::HistoryPooled],
            Stage::QuestionStar => &[Stage::QuestionPrime],
            Stage::QuestionPooled => &[Stage::QuestionStar],
            Stage::ImagePrime => &[Stage::Image, Stage::QuestionPooled],
            Stage::ImageStar => &[Stage::ImagePrime],
            Stage::Joint => &[Stage::QuestionStar, Stage::HistoryStar, Stage::ImageStar],
        }
    }

    /// True when `other` is this stage or feeds it, directly or not.
    pub fn depends_on(self, other: Stage) -> bool {
        self == other || self.inputs().iter().any(|s| s.depends_on(other))
    }
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::ImageGraph,
        Ablation::QuestionGraph,
        Ablation::HistoryGraph,
        Ablation::QuestionAware,
        Ablation::HistoryAware,
        Ablation::SpatialRelation,
        Ablation::DependencyRelation,
        Ablation::CoreferenceRelation,
    ];

    /// Command-line spelling.
    pub fn flag(self) -> &'static str {
        match self {
            Ablation::ImageGraph => "i-graph",
            Ablation::QuestionGraph => "q-graph",
            Ablation::HistoryGraph => "h-graph",
            Ablation::QuestionAware => "q-aware",
            Ablation::HistoryAware => "h-aware",
            Ablation::SpatialRelation => "spatial",
            Ablation::DependencyRelation => "dependency",
            Ablation::CoreferenceRelation => "coreference",
        }
    }

    /// Row label as printed in reports.
    pub fn row_name(self) -> &'static str {
        match self {
            Ablation::ImageGraph => "w/o I-Graph",
            Ablation::QuestionGraph => "w/o Q-Graph",
            Ablation::HistoryGraph => "w/o H-Graph",
            Ablation::QuestionAware => "w/o Q-Aware",
            Ablation::HistoryAware => "w/o H-Aware",
            Ablation::SpatialRelation => "w/o Spatial Relation",
            Ablation::DependencyRelation => "w/o Dependency Relation",
            Ablation::CoreferenceRelation => "w/o Coreference Relation",
        }
    }

    /// First activation the flag alters; everything earlier is untouched.
    pub fn first_changed_stage(self) -> Stage {
        match self {
            Ablation::HistoryGraph | Ablation::CoreferenceRelation => Stage::HistoryStar,
            Ablation::HistoryAware => Stage::QuestionPrime,
            Ablation::QuestionGraph | Ablation::DependencyRelation => Stage::QuestionStar,
            Ablation::QuestionAware => Stage::ImagePrime,
            Ablation::ImageGraph | Ablation::SpatialRelation => Stage::ImageStar,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for Ablation {
    type Err = GogError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("w/o ").unwrap_or(&key).replace(' ', "-");
        let key = key.strip_suffix("-relation").unwrap_or(&key);
        Ablation::ALL
            .iter()
            .copied()
            .find(|a| a.flag() == key)
            .ok_or_else(|| GogError::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Ablations(BTreeSet<Ablation>);

impl Ablations {
    pub fn none() -> Self {
        Ablations::default()
    }

    pub fn only(a: Ablation) -> Self {
        Ablations(BTreeSet::from([a]))
    }

    pub fn all() -> Self {
        Ablations(Ablation::ALL.into_iter().collect())
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.0.contains(&a)
    }

    pub fn insert(&mut self, a: Ablation) {
        self.0.insert(a);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Ablation> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|a| a.flag()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Ablations {
    type Err = GogError;

    /// Comma-separated flags; the empty string means no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Ablations::none();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            out.insert(part.parse()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderMode {
    Generative,
    Discriminative,
    Multi,
}

impl DecoderMode {
    pub fn name(self) -> &'static str {
        match self {
            DecoderMode::Generative => "gen",
            DecoderMode::Discriminative => "disc",
            DecoderMode::Multi => "multi",
        }
    }

    pub fn uses_generative(self) -> bool {
        self != DecoderMode::Discriminative
    }

    pub fn uses_discriminative(self) -> bool {
        self != DecoderMode::Generative
    }
}

impl FromStr for DecoderMode {
    type Err = GogError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gen" => Ok(DecoderMode::Generative),
            "disc" => Ok(DecoderMode::Discriminative),
            "multi" => Ok(DecoderMode::Multi),
            _ => Err(GogError::Config(format!("decoder_mode must be gen, disc or multi, got `{s}`"))),
        }
    }
}

/// Widths and sequence caps of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_word: usize,
    /// Width of the raw region features.
    pub d_v: usize,
    pub hidden: usize,
    pub heads: usize,
    pub caption_len: usize,
    pub question_len: usize,
    pub answer_len: usize,
    pub ablations: Ablations,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.d_word == 0 || self.d_v == 0 {
            return Err(GogError::Config("widths and heads must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(GogError::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(GogError::Config("vocabulary must hold the 4 special tokens".into()));
        }
        if self.caption_len == 0 || self.question_len == 0 || self.answer_len == 0 {
            return Err(GogError::Config("length caps must be positive".into()));
        }
        Ok(())
    }
}
