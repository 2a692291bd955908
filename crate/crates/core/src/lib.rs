//! Duplicate crash detection from component-level call stack similarity.
//!
//! Crash dumps are parsed into cleaned call stacks, stripped of stop words,
//! and lifted to component sequences using a Function -> Component map mined
//! from build manifests. Pairs of sequences are scored by a longest common
//! subsequence weighted by position and by the edit distance of the matched
//! function runs; the two weighting coefficients are tuned by AUC grid search
//! over labeled history, and the tuned model drives bind-or-file triage.

pub mod cli;
pub mod detector;
pub mod dump;
pub mod edit;
pub mod error;
pub mod knowledge;
pub mod params;
pub mod pipeline;
pub mod sequence;
pub mod similarity;
pub mod stopwords;
pub mod store;
pub mod synth;
pub mod trainer;
pub mod union_find;

pub use detector::{DetectionResult, Detector, Triage, Verdict};
pub use dump::{clean_frame, parse_dump, CrashDump, StackFrame};
pub use error::{Error, Result};
pub use knowledge::{ComponentManifest, ComponentMap};
pub use params::ModelParams;
pub use pipeline::Preprocessor;
pub use sequence::{component_distance, to_component_sequence, ComponentOccurrence, ComponentSequence};
pub use similarity::{lcs_match, similarity, MatchedPair, PairFeatures, SimilarityScore};
pub use stopwords::{derive_stop_words, filter_stop_words, StopWordList};
pub use store::{FailureStore, Window};
pub use trainer::{compute_auc, BugId, FailureRecord, Label, LabeledPair, TrainingSet};
