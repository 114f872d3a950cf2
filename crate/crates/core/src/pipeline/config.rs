//! Run-level configuration, loadable from a key-value (TOML) file.

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::bcnn::BcnnConfig;
use crate::drmm::DrmmConfig;
use crate::error::{arg_err, Error, Result};
use crate::index::Bm25Config;
use crate::model::ModelKind;
use crate::pacrr::PacrrConfig;

/// The document reranker to train or apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankerKind {
    TermPacrr,
    Pacrr,
    Drmm,
    AbelDrmm,
    AbelDensity,
    AbelDensityConfidence,
}

impl RerankerKind {
    pub const ALL: [RerankerKind; 6] = [
        RerankerKind::TermPacrr,
        RerankerKind::Pacrr,
        RerankerKind::Drmm,
        RerankerKind::AbelDrmm,
        RerankerKind::AbelDensity,
        RerankerKind::AbelDensityConfidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RerankerKind::AbelDensityConfidence => "abel_density_confidence",
            other => other.model_kind().name(),
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            RerankerKind::TermPacrr => ModelKind::TermPacrr,
            RerankerKind::Pacrr => ModelKind::Pacrr,
            RerankerKind::Drmm => ModelKind::Drmm,
            RerankerKind::AbelDrmm => ModelKind::AbelDrmm,
            RerankerKind::AbelDensity | RerankerKind::AbelDensityConfidence => {
                ModelKind::AbelDensity
            }
        }
    }

    pub fn confidence_filter(self) -> bool {
        self == RerankerKind::AbelDensityConfidence
    }
}

impl std::str::FromStr for RerankerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RerankerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| arg_err(format!("unknown reranker `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// BM25 pre-retrieval depth.
    pub n: usize,
    pub k_d: usize,
    pub k_s: usize,
    pub reranker: RerankerKind,
    pub ensemble_size: usize,
    /// Group returned snippets by document score.
    pub postprocess_snippets: bool,
    /// BM25 documents whose sentences form a query's snippet training pool
    /// (relevant documents are always added).
    pub snippet_pool_docs: usize,
    /// Feed zeros instead of the traditional IR features.
    pub zero_extra_features: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: 100,
            k_d: 10,
            k_s: 10,
            reranker: RerankerKind::TermPacrr,
            ensemble_size: 10,
            postprocess_snippets: true,
            snippet_pool_docs: 10,
            zero_extra_features: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_d > self.n {
            return Err(arg_err(format!(
                "k_d ({}) must not exceed n ({})",
                self.k_d, self.n
            )));
        }
        if self.k_s < 1 {
            return Err(arg_err("k_s must be >= 1"));
        }
        Ok(())
    }
}

/// Everything a run can be configured with. Every section and key is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiorankConfig {
    pub pipeline: PipelineConfig,
    pub bm25: Bm25Config,
    pub pacrr: PacrrConfig,
    pub drmm: DrmmConfig,
    pub bcnn: BcnnConfig,
    /// Overrides the per-model training defaults for document rerankers.
    pub train: Option<TrainConfig>,
    /// Overrides the BCNN training defaults.
    pub snippet_train: Option<TrainConfig>,
    pub gmap_epsilon: f64,
}

impl Default for BiorankConfig {
    fn default() -> Self {
        BiorankConfig {
            pipeline: PipelineConfig::default(),
            bm25: Bm25Config::default(),
            pacrr: PacrrConfig::default(),
            drmm: DrmmConfig::default(),
            bcnn: BcnnConfig::default(),
            train: None,
            snippet_train: None,
            gmap_epsilon: super::eval::DEFAULT_GMAP_EPSILON,
        }
    }
}

impl BiorankConfig {
    pub fn doc_train_config(&self) -> TrainConfig {
        self.train
            .clone()
            .unwrap_or_else(|| TrainConfig::for_model(self.pipeline.reranker.model_kind()))
    }

    pub fn snippet_train_config(&self) -> TrainConfig {
        self.snippet_train
            .clone()
            .unwrap_or_else(|| TrainConfig::for_model(ModelKind::Bcnn))
    }
}
