//! Orchestration: data formats, training, reranking, ensembles and
//! evaluation.

pub mod config;
pub mod data;
pub mod ensemble;
pub mod eval;
pub mod models;
pub mod pairs;
pub mod rerank;
pub mod train;

pub use config::{BiorankConfig, PipelineConfig, RerankerKind};
pub use data::{QrelEntry, Qrels, Query, RunEntry, SnippetRef};
pub use ensemble::{ensemble_runs, ensemble_vote};
pub use eval::{eval_f1, eval_gmap, eval_map10, evaluate_run, EvalReport, RunEvaluation};
pub use models::{AnyModel, DocModel, ModelConfigs, SnippetModel};
pub use pairs::{generate_pairs, TrainingPair};
pub use rerank::{rerank_pipeline, run_queries, Resources, TrainingData};
pub use train::{train, LabeledPool, TrainConfig, TrainOutcome};
