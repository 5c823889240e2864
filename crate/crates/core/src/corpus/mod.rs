//! Dialog corpus: records, file IO, vocabulary and the synthetic generator.

pub mod io;
pub mod toy;
pub mod types;
pub mod vocab;

pub use io::{load_corpus, save_corpus, split_file, tokenize, Corpus, LengthLimits, LoadReport};
pub use toy::{generate_toy_corpus, DialogLedger, ToyConfig, ToyCorpus};
pub use types::{
    AnnotatedDialog, BBox, CorefAnnotation, DepLabel, DependencyAnnotation, DependencyParse, DialogInstance, Mention,
    Region, Round, Split, NUM_CANDIDATES,
};
pub use vocab::{pad_or_truncate, Vocabulary, EOS, PAD, SOS, UNK};
