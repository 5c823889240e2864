//! Seeded synthetic dialog corpus whose annotations are correct by construction.
//!
//! Every image holds `n_regions` entities, each an (object, color) pair bound
//! to one region. The caption introduces the first two entities, and every
//! question refers back either to one of them by name or to the previous
//! question's entity by pronoun, so coreference chains fall out of the
//! generator's own entity ledger. Each question template carries a fixed
//! dependency parse. Region features are the sum of an object prototype and a
//! color prototype plus seeded noise, so answers are recoverable from both
//! the history text and the image.

use rand::seq::SliceRandom;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::{
    AnnotatedDialog, BBox, CorefAnnotation, DepLabel, DependencyAnnotation, DependencyParse, DialogInstance,
    Mention, Region, Round, NUM_CANDIDATES,
};
use crate::error::{GogError, Result};

pub const OBJECTS: [&str; 10] = ["dog", "cat", "man", "woman", "car", "tree", "ball", "bird", "horse", "cup"];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "white", "black", "brown", "yellow", "gray"];
const LOCATIONS: [&str; 3] = ["on the left", "in the middle", "on the right"];
const PROTOTYPE_SEED: u64 = 0x5eed_0f_70;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_dialogs: usize,
    /// Rounds per dialog.
    pub turns: usize,
    pub n_regions: usize,
    pub d_v: usize,
    pub n_objects: usize,
    pub n_colors: usize,
    pub image_size: (f64, f64),
    pub feature_noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            n_dialogs: 50,
            turns: 3,
            n_regions: 5,
            d_v: 16,
            n_objects: OBJECTS.len(),
            n_colors: COLORS.len(),
            image_size: (640.0, 480.0),
            feature_noise: 0.1,
        }
    }
}

/// Ground truth the generator used, kept alongside the emitted corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogLedger {
    /// `(object, color)` of each entity; entity `i` is region `i`.
    pub entities: Vec<(usize, usize)>,
    /// For each emitted coreference chain, the entity behind every mention.
    pub chain_entities: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub dialogs: Vec<AnnotatedDialog>,
    pub ledger: Vec<DialogLedger>,
}

/// Every distinct answer string the templates can produce.
fn answer_pool(n_objects: usize, n_colors: usize) -> Vec<String> {
    let mut pool = Vec::new();
    for col in COLORS.iter().take(n_colors) {
        pool.extend(color_family("", col).into_iter().take(2));
        pool.push(format!("yes it is {col}"));
        pool.push(format!("no it is {col}"));
        for obj in OBJECTS.iter().take(n_objects) {
            pool.extend(color_family(obj, col).into_iter().skip(2));
        }
    }
    for loc in LOCATIONS {
        pool.extend(location_family("", loc).into_iter().take(2));
        for obj in OBJECTS.iter().take(n_objects) {
            pool.extend(location_family(obj, loc).into_iter().skip(2));
        }
    }
    pool.extend(["yes", "yes it is", "no", "no it is not"].map(String::from));
    pool
}

/// Equivalent phrasings of one color answer.
fn color_family(obj: &str, col: &str) -> Vec<String> {
    vec![
        col.to_string(),
        format!("it is {col}"),
        format!("the {obj} is {col}"),
        format!("it is a {col} {obj}"),
    ]
}

fn location_family(obj: &str, loc: &str) -> Vec<String> {
    vec![loc.to_string(), format!("it is {loc}"), format!("the {obj} is {loc}")]
}

fn polar_family(truthful: bool, col: &str) -> Vec<String> {
    if truthful {
        vec!["yes".into(), "yes it is".into(), format!("yes it is {col}")]
    } else {
        vec!["no".into(), "no it is not".into(), format!("no it is {col}")]
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[usize]) -> usize {
    WeightedIndex::new(weights).expect("positive weights").sample(rng)
}

/// Picks one phrasing as the answer, weighted by how many pool strings
/// share its form; the rest become paraphrases.
fn phrase<R: Rng>(rng: &mut R, mut family: Vec<String>, weights: &[usize]) -> (String, Vec<String>) {
    let answer = family.remove(pick(rng, weights));
    (answer, family)
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

struct Question {
    tokens: Vec<String>,
    parse: DependencyParse,
    mention: (usize, usize),
    answers: Vec<String>,
    forms: Vec<usize>,
}

fn parse(heads: &[i64], labels: &[DepLabel]) -> DependencyParse {
    DependencyParse {
        heads: heads.to_vec(),
        labels: labels.to_vec(),
    }
}

fn place_of(bbox: &BBox, width: f64) -> usize {
    let (cx, _) = bbox.center();
    ((cx / width * 3.0).floor() as usize).min(2)
}

pub fn generate_toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    if cfg.turns < 1 {
        return Err(GogError::Generation("turns must be at least 1".into()));
    }
    if cfg.n_regions < 2 {
        return Err(GogError::Generation("need at least 2 regions".into()));
    }
    if cfg.n_objects > OBJECTS.len() || cfg.n_colors > COLORS.len() || cfg.n_colors < 2 {
        return Err(GogError::Generation(format!(
            "object/color inventory must be within {}x{} and have at least 2 colors",
            OBJECTS.len(),
            COLORS.len()
        )));
    }
    if cfg.n_regions > cfg.n_objects {
        return Err(GogError::Generation(format!(
            "{} regions need {} distinct object types, inventory has {}",
            cfg.n_regions, cfg.n_regions, cfg.n_objects
        )));
    }
    let pool = answer_pool(cfg.n_objects, cfg.n_colors);
    if pool.len() < NUM_CANDIDATES {
        return Err(GogError::Generation(format!(
            "answer pool has {} distinct answers, {NUM_CANDIDATES} candidates required",
            pool.len()
        )));
    }

    let mut proto_rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED ^ cfg.d_v as u64);
    let mut proto = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..cfg.d_v).map(|_| proto_rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let object_protos = proto(OBJECTS.len());
    let color_protos = proto(COLORS.len());

    // Question types and phrasings are weighted by their share of the pool,
    // so every pool string is about equally likely to be a ground truth.
    let (no, nc) = (cfg.n_objects, cfg.n_colors);
    let color_forms = [nc, nc, no * nc, no * nc];
    let location_forms = [3, 3, 3 * no];
    let polar_forms = [1, 1, nc];
    let kinds = [
        color_forms.iter().sum::<usize>(),
        location_forms.iter().sum(),
        2 * polar_forms.iter().sum::<usize>(),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (width, height) = cfg.image_size;
    let mut dialogs = Vec::with_capacity(cfg.n_dialogs);
    let mut ledger = Vec::with_capacity(cfg.n_dialogs);

    for d in 0..cfg.n_dialogs {
        let mut objects: Vec<usize> = (0..cfg.n_objects).collect();
        objects.shuffle(&mut rng);
        let entities: Vec<(usize, usize)> = objects[..cfg.n_regions]
            .iter()
            .map(|&o| (o, rng.gen_range(0..cfg.n_colors)))
            .collect();

        let mut regions = Vec::with_capacity(cfg.n_regions);
        for &(o, c) in &entities {
            let w = rng.gen_range(48.0..(width * 0.35).max(49.0));
            let h = rng.gen_range(48.0..(height * 0.4).max(49.0));
            let x1 = rng.gen_range(0.0..(width - w));
            let y1 = rng.gen_range(0.0..(height - h));
            let bbox = BBox::new(x1.round(), y1.round(), (x1 + w).round(), (y1 + h).round())?;
            let feature = (0..cfg.d_v)
                .map(|k| {
                    object_protos[o][k]
                        + color_protos[c][k]
                        + rng.gen_range(-cfg.feature_noise..=cfg.feature_noise)
                })
                .collect();
            regions.push(Region { bbox, feature });
        }

        let (o0, c0) = entities[0];
        let (o1, c1) = entities[1];
        let caption = words(&format!(
            "a {} {} next to a {} {}",
            COLORS[c0], OBJECTS[o0], COLORS[c1], OBJECTS[o1]
        ));
        let mut chains: Vec<Vec<Mention>> = vec![
            vec![Mention { turn: 0, start: 0, end: 3 }],
            vec![Mention { turn: 0, start: 5, end: 8 }],
        ];
        let mut chain_entities: Vec<Vec<usize>> = vec![vec![0], vec![1]];

        let mut rounds = Vec::with_capacity(cfg.turns);
        let mut parses = Vec::with_capacity(cfg.turns);
        let mut prev_entity: Option<usize> = None;
        for r in 0..cfg.turns {
            let pronoun = prev_entity.is_some() && rng.gen_bool(0.35);
            let entity = match prev_entity {
                Some(e) if pronoun => e,
                _ => rng.gen_range(0..2),
            };
            let (o, c) = entities[entity];
            let place = place_of(&regions[entity].bbox, width);
            let (obj, col, loc) = (OBJECTS[o], COLORS[c], LOCATIONS[place]);
            use DepLabel::*;
            let kind = pick(&mut rng, if pronoun { &kinds[..2] } else { &kinds });
            let q = if pronoun {
                if kind == 0 {
                    Question {
                        tokens: words("what color is it ?"),
                        parse: parse(&[1, 2, -1, 2, 2], &[Det, Dep, Root, Nsubj, Punct]),
                        mention: (3, 4),
                        answers: color_family(obj, col),
                        forms: color_forms.to_vec(),
                    }
                } else {
                    Question {
                        tokens: words("where is it ?"),
                        parse: parse(&[1, -1, 1, 1], &[Advmod, Root, Nsubj, Punct]),
                        mention: (2, 3),
                        answers: location_family(obj, loc),
                        forms: location_forms.to_vec(),
                    }
                }
            } else {
                match kind {
                    0 => Question {
                        tokens: words(&format!("what color is the {obj} ?")),
                        parse: parse(&[1, 2, -1, 4, 2, 2], &[Det, Dep, Root, Det, Nsubj, Punct]),
                        mention: (3, 5),
                        answers: color_family(obj, col),
                        forms: color_forms.to_vec(),
                    },
                    1 => Question {
                        tokens: words(&format!("where is the {obj} ?")),
                        parse: parse(&[1, -1, 3, 1, 1], &[Advmod, Root, Det, Nsubj, Punct]),
                        mention: (2, 4),
                        answers: location_family(obj, loc),
                        forms: location_forms.to_vec(),
                    },
                    _ => {
                        let truthful = rng.gen_bool(0.5);
                        let asked = if truthful {
                            c
                        } else {
                            (c + rng.gen_range(1..cfg.n_colors)) % cfg.n_colors
                        };
                        Question {
                            tokens: words(&format!("is the {obj} {} ?", COLORS[asked])),
                            parse: parse(&[3, 2, 3, -1, 3], &[Cop, Det, Nsubj, Root, Punct]),
                            mention: (1, 3),
                            answers: polar_family(truthful, col),
                            forms: polar_forms.to_vec(),
                        }
                    }
                }
            };

            let mention = Mention {
                turn: r + 1,
                start: q.mention.0,
                end: q.mention.1,
            };
            if entity < 2 {
                chains[entity].push(mention);
                chain_entities[entity].push(entity);
            }

            let (answer, paraphrases) = phrase(&mut rng, q.answers, &q.forms);
            let mut candidates: Vec<String> = Vec::with_capacity(NUM_CANDIDATES);
            candidates.push(answer.clone());
            candidates.extend(paraphrases.iter().cloned());
            let mut distractors: Vec<&String> = pool.iter().filter(|p| !candidates.contains(p)).collect();
            distractors.shuffle(&mut rng);
            let need = NUM_CANDIDATES - candidates.len();
            candidates.extend(distractors[..need].iter().map(|p| p.to_string()));
            candidates.shuffle(&mut rng);
            let gt_index = candidates
                .iter()
                .position(|c| *c == answer)
                .expect("ground truth inserted above");
            let relevance = candidates
                .iter()
                .map(|c| {
                    if *c == answer {
                        1.0
                    } else if paraphrases.contains(c) {
                        0.5
                    } else {
                        0.0
                    }
                })
                .collect();
            debug_assert!(pool.contains(&answer));

            rounds.push(Round {
                question: q.tokens,
                answer: words(&answer),
                candidates: candidates.iter().map(|c| words(c)).collect(),
                gt_index,
                relevance: Some(relevance),
            });
            parses.push(q.parse);
            prev_entity = Some(entity);
        }

        dialogs.push(AnnotatedDialog {
            dialog: DialogInstance {
                image_id: format!("toy-{}-{d:04}", cfg.seed),
                image_size: (width, height),
                regions,
                caption,
                rounds,
            },
            coref: CorefAnnotation { chains },
            deps: DependencyAnnotation { rounds: parses },
        });
        ledger.push(DialogLedger {
            entities,
            chain_entities,
        });
    }
    Ok(ToyCorpus { dialogs, ledger })
}
