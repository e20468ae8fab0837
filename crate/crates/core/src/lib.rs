pub mod ablation;
pub mod backend;
pub mod cot;
pub mod curriculum;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod io;
pub mod phrasing;
pub mod pipeline;
pub mod presets;
pub mod rng;
pub mod split;
pub mod synthetic;
pub mod tokenizer;

pub use ablation::{AblationRow, Experiment};
pub use backend::{Backend, BackendConfig, FineTuneParams, Normalization};
pub use cot::{ExemplarSet, PromptMode};
pub use curriculum::{Corpora, Curriculum, CurriculumConfig};
pub use domain::{AttributeSpec, Domain, Item, ItemPair, Order, Qualification};
pub use error::{Error, Result};
pub use eval::{EvalReport, ScoringOptions, TestCase, TestSuite};
pub use ingest::IngestConfig;
pub use phrasing::{PhrasingRegistry, TaskKind, TrainingExample};
pub use pipeline::{run_pipeline, RunConfig, RunSummary};
pub use split::{ItemSplit, PairOrigin, PairSet};
pub use tokenizer::{Tokenizer, TokenizerSpec};
