//! Trained document and snippet scorers bundled with their feature scaling,
//! and their parameter files.

use rand::Rng;

use crate::bcnn::{Bcnn, BcnnConfig, BcnnInput};
use crate::drmm::{Drmm, DrmmCache, DrmmConfig, DrmmInput, DrmmVariant};
use crate::embed::{EmbeddedTokens, EmbeddingStore};
use crate::error::{arg_err, Error, Result};
use crate::features::FeatureNormalizer;
use crate::model::{ModelFile, ModelKind, Ranker};
use crate::nn::ParamSet;
use crate::pacrr::{Pacrr, PacrrCache, PacrrConfig, PacrrHead, PacrrInput};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Initial values are overwritten when parameters are loaded.
fn placeholder_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// One of the document rerankers.
#[derive(Debug, Clone)]
pub enum DocNet {
    Pacrr(Pacrr),
    Drmm(Drmm),
}

#[derive(Debug, Clone)]
pub enum DocInput {
    Pacrr(PacrrInput),
    Drmm(DrmmInput),
}

#[derive(Debug, Clone)]
pub enum DocCache {
    Pacrr(PacrrCache),
    Drmm(DrmmCache),
}

impl Ranker for DocNet {
    type Input = DocInput;
    type Cache = DocCache;

    fn params(&self) -> &ParamSet {
        match self {
            DocNet::Pacrr(m) => m.params(),
            DocNet::Drmm(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            DocNet::Pacrr(m) => m.params_mut(),
            DocNet::Drmm(m) => m.params_mut(),
        }
    }

    fn forward(&self, input: &DocInput) -> Result<(f64, DocCache)> {
        match (self, input) {
            (DocNet::Pacrr(m), DocInput::Pacrr(i)) => {
                m.forward(i).map(|(s, c)| (s, DocCache::Pacrr(c)))
            }
            (DocNet::Drmm(m), DocInput::Drmm(i)) => {
                m.forward(i).map(|(s, c)| (s, DocCache::Drmm(c)))
            }
            _ => Err(arg_err("input prepared for a different model family")),
        }
    }

    fn backward(&mut self, input: &DocInput, cache: &DocCache, dscore: f64) {
        match (self, input, cache) {
            (DocNet::Pacrr(m), DocInput::Pacrr(i), DocCache::Pacrr(c)) => m.backward(i, c, dscore),
            (DocNet::Drmm(m), DocInput::Drmm(i), DocCache::Drmm(c)) => m.backward(i, c, dscore),
            _ => unreachable!("cache produced by a different model family"),
        }
    }
}

/// Model configurations used to instantiate any [`ModelKind`].
#[derive(Debug, Clone, Default)]
pub struct ModelConfigs {
    pub pacrr: PacrrConfig,
    pub drmm: DrmmConfig,
    pub bcnn: BcnnConfig,
}

impl ModelConfigs {
    /// The architecture config of `kind`, with the embedding dimension and
    /// variant fields forced to match.
    pub fn doc_config(&self, kind: ModelKind, dim: usize) -> Result<serde_json::Value> {
        let value = match kind {
            ModelKind::TermPacrr | ModelKind::Pacrr => {
                let mut c = self.pacrr.clone();
                c.head = if kind == ModelKind::Pacrr {
                    PacrrHead::ConcatMlp
                } else {
                    PacrrHead::PerTermMlp
                };
                serde_json::to_value(c)?
            }
            ModelKind::Drmm | ModelKind::AbelDrmm | ModelKind::AbelDensity => {
                let mut c = self.drmm.clone();
                c.dim = dim;
                c.variant = if kind == ModelKind::Drmm {
                    DrmmVariant::Histogram
                } else {
                    DrmmVariant::Abel
                };
                c.extension.density_enabled = kind == ModelKind::AbelDensity;
                serde_json::to_value(c)?
            }
            ModelKind::Bcnn => return Err(arg_err("bcnn is not a document reranker")),
        };
        Ok(value)
    }
}

#[derive(Debug, Clone)]
pub struct DocModel {
    pub kind: ModelKind,
    pub net: DocNet,
    pub norm: FeatureNormalizer,
    config: serde_json::Value,
}

impl DocModel {
    pub fn new<R: Rng>(
        kind: ModelKind,
        config: serde_json::Value,
        norm: FeatureNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        let net = match kind {
            ModelKind::TermPacrr | ModelKind::Pacrr => {
                DocNet::Pacrr(Pacrr::new(serde_json::from_value(config.clone())?, rng)?)
            }
            ModelKind::Drmm | ModelKind::AbelDrmm | ModelKind::AbelDensity => {
                DocNet::Drmm(Drmm::new(serde_json::from_value(config.clone())?, rng)?)
            }
            ModelKind::Bcnn => return Err(arg_err("bcnn is not a document reranker")),
        };
        Ok(DocModel {
            kind,
            net,
            norm,
            config,
        })
    }

    pub fn drmm_config(&self) -> Option<&DrmmConfig> {
        match &self.net {
            DocNet::Drmm(m) => Some(m.config()),
            DocNet::Pacrr(_) => None,
        }
    }

    pub fn set_confidence(&mut self, enabled: bool) -> Result<()> {
        let DocNet::Drmm(m) = &mut self.net else {
            return Err(arg_err(
                "the confidence filter applies to abel_density models only",
            ));
        };
        m.extension_mut().confidence_enabled = enabled;
        self.config = serde_json::to_value(m.config())?;
        Ok(())
    }

    /// Prepares one (query, document) input; `extra_raw` is scaled here.
    pub fn input(
        &self,
        store: &Arc<EmbeddingStore>,
        query: &[String],
        doc: &[String],
        extra_raw: &[f64],
        zero_extra: bool,
    ) -> Result<DocInput> {
        let extra = if zero_extra {
            vec![0.0; extra_raw.len()]
        } else {
            self.norm.apply(extra_raw)
        };
        Ok(match &self.net {
            DocNet::Pacrr(m) => {
                DocInput::Pacrr(PacrrInput::build(query, doc, store, m.config(), extra)?)
            }
            DocNet::Drmm(_) => DocInput::Drmm(DrmmInput {
                q_idf: query.iter().map(|t| store.idf_of(t)).collect(),
                query: EmbeddedTokens::new(store, query),
                doc: EmbeddedTokens::new(store, doc),
                extra,
            }),
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::new(
            self.kind,
            self.config.clone(),
            self.norm.clone(),
            self.net.params(),
        )
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let mut m = DocModel::new(
            file.kind,
            file.config.clone(),
            file.feature_norm.clone(),
            &mut placeholder_rng(),
        )?;
        m.net.params_mut().load_named(&file.tensors)?;
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct SnippetModel {
    pub net: Bcnn,
    pub norm: FeatureNormalizer,
}

impl SnippetModel {
    pub fn new<R: Rng>(
        mut config: BcnnConfig,
        dim: usize,
        norm: FeatureNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.dim = dim;
        Ok(SnippetModel {
            net: Bcnn::new(config, rng)?,
            norm,
        })
    }

    pub fn input(
        &self,
        store: &Arc<EmbeddingStore>,
        query: &[String],
        snippet: &[String],
        extra_raw: &[f64],
        zero_extra: bool,
    ) -> BcnnInput {
        let extra = if zero_extra {
            vec![0.0; extra_raw.len()]
        } else {
            self.norm.apply(extra_raw)
        };
        BcnnInput::new(store, query, snippet, self.net.config(), extra)
    }

    pub fn to_file(&self) -> Result<ModelFile> {
        Ok(ModelFile::new(
            ModelKind::Bcnn,
            serde_json::to_value(self.net.config())?,
            self.norm.clone(),
            self.net.params(),
        ))
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.kind != ModelKind::Bcnn {
            return Err(Error::Format(format!(
                "expected a bcnn model, found {}",
                file.kind
            )));
        }
        let config: BcnnConfig = serde_json::from_value(file.config.clone())?;
        let dim = config.dim;
        let mut m = SnippetModel::new(
            config,
            dim,
            file.feature_norm.clone(),
            &mut placeholder_rng(),
        )?;
        m.net.params_mut().load_named(&file.tensors)?;
        Ok(m)
    }
}

/// Either kind of trained model, as found in a parameter file.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Doc(DocModel),
    Snippet(SnippetModel),
}

impl AnyModel {
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.kind == ModelKind::Bcnn {
            SnippetModel::from_file(file).map(AnyModel::Snippet)
        } else {
            DocModel::from_file(file).map(AnyModel::Doc)
        }
    }
}
