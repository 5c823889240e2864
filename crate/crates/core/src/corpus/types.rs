//! Dialog records and their relation annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GogError, Result};

/// Number of candidate answers attached to every round.
pub const NUM_CANDIDATES: usize = 100;

/// Axis-aligned box `[x1, y1, x2, y2]` in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox([x1, y1, x2, y2]);
        b.validate()?;
        Ok(b)
    }

    pub fn x1(&self) -> f64 {
        self.0[0]
    }
    pub fn y1(&self) -> f64 {
        self.0[1]
    }
    pub fn x2(&self) -> f64 {
        self.0[2]
    }
    pub fn y2(&self) -> f64 {
        self.0[3]
    }

    pub fn validate(&self) -> Result<()> {
        let [x1, y1, x2, y2] = self.0;
        if !(self.0.iter().all(|v| v.is_finite()) && x1 < x2 && y1 < y2) {
            return Err(GogError::Validation(format!(
                "degenerate box [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2() - self.x1()) * (self.y2() - self.y1())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1() + self.x2()) / 2.0, (self.y1() + self.y2()) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub gt_index: usize,
    pub relevance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogInstance {
    pub image_id: String,
    /// Image width and height in pixels.
    pub image_size: (f64, f64),
    pub regions: Vec<Region>,
    pub caption: Vec<String>,
    pub rounds: Vec<Round>,
}

impl DialogInstance {
    pub fn image_diagonal(&self) -> f64 {
        self.image_size.0.hypot(self.image_size.1)
    }

    /// Tokens of history turn `turn`: the caption for turn 0, otherwise the
    /// question followed by the answer of round `turn - 1`.
    pub fn history_turn(&self, turn: usize) -> Vec<String> {
        if turn == 0 {
            self.caption.clone()
        } else {
            let r = &self.rounds[turn - 1];
            r.question.iter().chain(&r.answer).cloned().collect()
        }
    }

    /// Tokens a coreference mention in `turn` may point into: the caption
    /// for turn 0, the question of round `turn - 1` otherwise.
    pub fn coref_turn_tokens(&self, turn: usize) -> Option<&[String]> {
        if turn == 0 {
            Some(&self.caption)
        } else {
            self.rounds.get(turn - 1).map(|r| r.question.as_slice())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rec = |field: &str, message: String| GogError::Validation(format!(
            "dialog {}: {field}: {message}",
            self.image_id
        ));
        for (i, r) in self.regions.iter().enumerate() {
            r.bbox
                .validate()
                .map_err(|e| rec(&format!("regions[{i}].bbox"), e.to_string()))?;
        }
        for (k, round) in self.rounds.iter().enumerate() {
            if round.candidates.len() != NUM_CANDIDATES {
                return Err(rec(
                    &format!("rounds[{k}].candidates"),
                    format!("expected {NUM_CANDIDATES} candidates, found {}", round.candidates.len()),
                ));
            }
            if round.gt_index >= NUM_CANDIDATES {
                return Err(rec(
                    &format!("rounds[{k}].gt_index"),
                    format!("{} out of range", round.gt_index),
                ));
            }
            if let Some(rel) = &round.relevance {
                if rel.len() != NUM_CANDIDATES {
                    return Err(rec(
                        &format!("rounds[{k}].relevance"),
                        format!("expected {NUM_CANDIDATES} values, found {}", rel.len()),
                    ));
                }
                if rel.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(rec(&format!("rounds[{k}].relevance"), "values must lie in [0, 1]".into()));
                }
                if rel[round.gt_index] != 1.0 {
                    return Err(rec(
                        &format!("rounds[{k}].relevance"),
                        "ground truth must have relevance 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub turn: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefAnnotation {
    pub chains: Vec<Vec<Mention>>,
}

/// Closed set of dependency relation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepLabel {
    Nsubj,
    Root,
    Dep,
    Punct,
    Det,
    Cop,
    Prep,
    Aux,
    Pobj,
    Amod,
    Advmod,
    Dobj,
    Other,
}

impl DepLabel {
    pub const ALL: [DepLabel; 13] = [
        DepLabel::Nsubj,
        DepLabel::Root,
        DepLabel::Dep,
        DepLabel::Punct,
        DepLabel::Det,
        DepLabel::Cop,
        DepLabel::Prep,
        DepLabel::Aux,
        DepLabel::Pobj,
        DepLabel::Amod,
        DepLabel::Advmod,
        DepLabel::Dobj,
        DepLabel::Other,
    ];

    pub fn index(self) -> usize {
        DepLabel::ALL.iter().position(|&l| l == self).expect("label in ALL")
    }

    pub fn name(self) -> &'static str {
        match self {
            DepLabel::Nsubj => "nsubj",
            DepLabel::Root => "root",
            DepLabel::Dep => "dep",
            DepLabel::Punct => "punct",
            DepLabel::Det => "det",
            DepLabel::Cop => "cop",
            DepLabel::Prep => "prep",
            DepLabel::Aux => "aux",
            DepLabel::Pobj => "pobj",
            DepLabel::Amod => "amod",
            DepLabel::Advmod => "advmod",
            DepLabel::Dobj => "dobj",
            DepLabel::Other => "other",
        }
    }
}

impl fmt::Display for DepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DepLabel {
    type Err = GogError;

    fn from_str(s: &str) -> Result<Self> {
        DepLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| GogError::Annotation(format!("unknown dependency label `{s}`")))
    }
}

/// Parse of one question: `heads[i]` is the head token of `i`, `-1` for the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyParse {
    pub heads: Vec<i64>,
    pub labels: Vec<DepLabel>,
}

impl DependencyParse {
    /// Checks for one root, in-range heads and absence of cycles.
    pub fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if self.labels.len() != n {
            return Err(GogError::Annotation(format!(
                "{} heads but {} labels",
                n,
                self.labels.len()
            )));
        }
        if n == 0 {
            return Ok(());
        }
        let roots = self.heads.iter().filter(|&&h| h == -1).count();
        if roots != 1 {
            return Err(GogError::Annotation(format!("expected exactly one root, found {roots}")));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h < -1 || h >= n as i64 || h == i as i64 {
                return Err(GogError::Annotation(format!("token {i} has invalid head {h}")));
            }
        }
        // every token must reach the root within n steps
        for start in 0..n {
            let mut cur = start as i64;
            let mut steps = 0;
            while cur != -1 {
                cur = self.heads[cur as usize];
                steps += 1;
                if steps > n {
                    return Err(GogError::Annotation(format!(
                        "cycle in dependency heads through token {start}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DependencyAnnotation {
    /// One parse per round's question.
    pub rounds: Vec<DependencyParse>,
}

/// A dialog together with its sidecar annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDialog {
    pub dialog: DialogInstance,
    pub coref: CorefAnnotation,
    pub deps: DependencyAnnotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = GogError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(GogError::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_is_rejected() {
        let p = DependencyParse {
            heads: vec![1, 2, 0, -1],
            labels: vec![DepLabel::Dep; 4],
        };
        assert!(p.validate().unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn two_roots_rejected() {
        let p = DependencyParse {
            heads: vec![-1, -1],
            labels: vec![DepLabel::Root; 2],
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(BBox::new(5.0, 0.0, 2.0, 4.0).is_err());
        assert!(BBox::new(0.0, 0.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn label_names_round_trip() {
        for l in DepLabel::ALL {
            assert_eq!(l.name().parse::<DepLabel>().unwrap(), l);
        }
    }
}
