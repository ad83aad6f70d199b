//! Token-level collaborative decoding between a base and an aligned language
//! model, with the diversity and quality metrics used to evaluate it.
//!
//! * [`backends`]: model and scoring interfaces, synthetic and HTTP backends.
//! * [`router`]: routing strategies deciding which model writes each word.
//! * [`decoder`]: the decoding loop producing traces and output groups.
//! * [`lexmetrics`], [`semmetrics`], [`discourse`]: group-level metrics.
//! * [`pareto`]: diversity–quality spaces, Coverage and Dominance.
//! * [`harness`]: configuration-driven generate / evaluate / aggregate runs.

pub mod backends;
pub mod decoder;
pub mod discourse;
pub mod error;
pub mod harness;
pub mod lexeme;
pub mod lexmetrics;
pub mod pareto;
pub mod router;
pub mod semmetrics;

pub use decoder::{apply_sampling, Decoder, GenerationConfig, GenerationTrace, Method, OutputGroup, Prompt};
pub use error::{Error, Result};
pub use router::{Router, Source, StrategyKind, StrategySpec};
