//! Multilingual gender-bias evaluation for masked language models.
//!
//! The pipeline extracts gendered sentences from a parallel corpus using
//! English word lists ([`corpus`]), reads per-sentence model outputs produced
//! by an external runtime or the built-in mock ([`model_protocol`]), scores
//! male against female sentences with similarity-weighted likelihood
//! comparisons ([`scoring`], [`paired_eval`]) and tests the result
//! ([`stats`]).

pub mod corpus;
pub mod hash;
pub mod model_protocol;
pub mod paired_eval;
pub mod scoring;
pub mod stats;

pub use corpus::{
    downsample_balance, extract_gendered, gender_preservation_rate, load_parallel, substitute_names, Gender,
    GenderedSubsets, MatchMode, NameMap, ParallelCorpus, ParallelSource, PreservationReport, SentencePair, WordList,
};
pub use model_protocol::{mock_score, read_records, validate_pairfile, Group, MockSpec, ModelRecord, RecordPair};
pub use paired_eval::{generate_templates, paired_bias_score, shuffle_pairs, PairedScore, TemplateSpec};
pub use scoring::{aula, mbe_score, sentence_similarity, BiasResult, ScoreConfig, SimilarityConfig};
pub use stats::{correlations, diff_stats, direction_agreement, mcnemar_vs_random, McNemarResult, MetaReport};
