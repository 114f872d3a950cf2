//! The interface shared by every neural scorer, plus the on-disk
//! named-tensor parameter format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureNormalizer;
use crate::nn::{NamedTensor, ParamSet};

/// A differentiable scorer of prepared (query, text) inputs.
///
/// `forward` returns the raw score (a logit for probabilistic models)
/// together with whatever the backward pass needs; `backward` accumulates
/// `dscore * d score / d theta` into the parameter gradients.
pub trait Ranker {
    type Input;
    type Cache;

    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn forward(&self, input: &Self::Input) -> Result<(f64, Self::Cache)>;
    fn backward(&mut self, input: &Self::Input, cache: &Self::Cache, dscore: f64);

    fn score(&self, input: &Self::Input) -> Result<f64> {
        self.forward(input).map(|(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TermPacrr,
    Pacrr,
    Drmm,
    AbelDrmm,
    AbelDensity,
    Bcnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::TermPacrr,
        ModelKind::Pacrr,
        ModelKind::Drmm,
        ModelKind::AbelDrmm,
        ModelKind::AbelDensity,
        ModelKind::Bcnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TermPacrr => "term_pacrr",
            ModelKind::Pacrr => "pacrr",
            ModelKind::Drmm => "drmm",
            ModelKind::AbelDrmm => "abel_drmm",
            ModelKind::AbelDensity => "abel_density",
            ModelKind::Bcnn => "bcnn",
        }
    }

    pub fn is_document_model(self) -> bool {
        self != ModelKind::Bcnn
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown model kind `{s}`")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

const PARAMS_FORMAT: &str = "biorank-params";
const PARAMS_VERSION: u32 = 1;

/// Serialized model: kind, architecture config, feature scaling and the
/// named tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub feature_norm: FeatureNormalizer,
    #[serde(default)]
    pub chosen_epoch: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub tensors: Vec<NamedTensor>,
}

impl ModelFile {
    pub fn new(
        kind: ModelKind,
        config: serde_json::Value,
        feature_norm: FeatureNormalizer,
        params: &ParamSet,
    ) -> Self {
        ModelFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            kind,
            config,
            feature_norm,
            chosen_epoch: None,
            seed: None,
            tensors: params.to_named(),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(std::io::BufReader::new(reader))?;
        if f.format != PARAMS_FORMAT || f.version != PARAMS_VERSION {
            return Err(Error::Format(format!(
                "expected {PARAMS_FORMAT} v{PARAMS_VERSION}, found {} v{}",
                f.format, f.version
            )));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}
