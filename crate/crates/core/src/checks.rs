//! Finite-difference gradient checks on small random instances of every
//! model, shared by the `gradcheck` command and the test suites.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bcnn::BcnnConfig;
use crate::drmm::{AbelExtensionConfig, DrmmConfig};
use crate::embed::{DefaultIdf, EmbeddingStore};
use crate::error::Result;
use crate::features::{FeatureNormalizer, N_EXTRA_FEATURES};
use crate::model::{ModelKind, Ranker};
use crate::nn::{finite_diff_gradcheck, GradCheckReport};
use crate::pacrr::PacrrConfig;
use crate::pipeline::{DocModel, ModelConfigs, SnippetModel};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference check of `model`'s gradient of the score on `input`.
pub fn gradcheck_ranker<M: Ranker + Clone>(
    model: &M,
    input: &M::Input,
    h: f64,
) -> Result<GradCheckReport> {
    let base = model.clone();
    let mut work = model.clone();
    let mut params = model.params().clone();
    finite_diff_gradcheck(
        &mut params,
        |p| {
            let mut m = base.clone();
            *m.params_mut() = p.clone();
            m.score(input)
        },
        |p| {
            *work.params_mut() = p.clone();
            let (_, cache) = work.forward(input)?;
            work.backward(input, &cache, 1.0);
            *p = work.params().clone();
            Ok(())
        },
        h,
    )
}

/// Architecture sizes small enough for exhaustive finite differences.
pub fn tiny_configs(dim: usize) -> ModelConfigs {
    ModelConfigs {
        pacrr: PacrrConfig {
            l_q: 3,
            l_d: 8,
            l_g: 3,
            filters_per_size: 2,
            k: 2,
            mlp_hidden_dims: 3,
            ..PacrrConfig::default()
        },
        drmm: DrmmConfig {
            dim,
            n_buckets: 5,
            mlp_hidden_dims: 3,
            extension: AbelExtensionConfig {
                l_w: 3,
                ..AbelExtensionConfig::default()
            },
            ..DrmmConfig::default()
        },
        bcnn: BcnnConfig {
            dim,
            n_filters: 3,
            filter_width: 2,
            n_blocks: 2,
            ..BcnnConfig::default()
        },
    }
}

/// A random vocabulary `t0 .. t{n-1}` with random idf values. Tokens
/// `t{n}` and beyond are out of vocabulary.
pub fn tiny_store(n: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(dim);
    let mut idf = std::collections::HashMap::new();
    for i in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert(&format!("t{i}"), &v).expect("dim matches");
        idf.insert(format!("t{i}"), rng.gen_range(0.1..3.0));
    }
    store.set_idf_table(idf, DefaultIdf::Fixed(1.0));
    store
}

/// Random token sequence of length `len` over `t0 .. t{n_tokens-1}`.
pub fn random_tokens(rng: &mut impl Rng, len: usize, n_tokens: usize) -> Vec<String> {
    (0..len)
        .map(|_| format!("t{}", rng.gen_range(0..n_tokens)))
        .collect()
}

/// Adds uniform noise to every parameter so that biases and other
/// zero-initialised tensors are exercised too.
pub fn jitter_params<M: Ranker>(model: &mut M, scale: f64, rng: &mut impl Rng) {
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub kind: ModelKind,
    pub trials: usize,
    pub max_relative_error: f64,
    pub worst: Option<GradCheckReport>,
}

impl GradCheckSummary {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

const DIM: usize = 4;
const VOCAB: usize = 8;

/// Runs `trials` gradient checks of `kind` on independent random instances.
pub fn gradcheck_model(kind: ModelKind, seed: u64, trials: usize) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = tiny_configs(DIM);
    let mut summary = GradCheckSummary {
        kind,
        trials,
        max_relative_error: 0.0,
        worst: None,
    };
    for _ in 0..trials {
        let store = Arc::new(tiny_store(VOCAB, DIM, &mut rng));
        let extra: Vec<f64> = (0..N_EXTRA_FEATURES)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        // a couple of out-of-vocabulary ids so masking is exercised
        let vocab = VOCAB + 2;
        let report = if kind == ModelKind::Bcnn {
            let mut m = SnippetModel::new(
                configs.bcnn.clone(),
                DIM,
                FeatureNormalizer::identity(N_EXTRA_FEATURES),
                &mut rng,
            )?;
            jitter_params(&mut m.net, 0.2, &mut rng);
            let q = random_tokens(&mut rng, 5, vocab);
            let s = random_tokens(&mut rng, 7, vocab);
            let input = m.input(&store, &q, &s, &extra, false);
            gradcheck_ranker(&m.net, &input, GRADCHECK_STEP)?
        } else {
            let cfg = configs.doc_config(kind, DIM)?;
            let mut m = DocModel::new(
                kind,
                cfg,
                FeatureNormalizer::identity(N_EXTRA_FEATURES),
                &mut rng,
            )?;
            jitter_params(&mut m.net, 0.2, &mut rng);
            let q_len = rng.gen_range(2..=3);
            let d_len = rng.gen_range(4..=8);
            let mut q = random_tokens(&mut rng, q_len, vocab);
            // keep at least one in-vocabulary query term
            q[0] = format!("t{}", rng.gen_range(0..VOCAB));
            let mut d = random_tokens(&mut rng, d_len, vocab);
            d.shuffle(&mut rng);
            let input = m.input(&store, &q, &d, &extra, false)?;
            gradcheck_ranker(&m.net, &input, GRADCHECK_STEP)?
        };
        if report.max_relative_error >= summary.max_relative_error {
            summary.max_relative_error = report.max_relative_error;
            summary.worst = Some(report);
        }
    }
    Ok(summary)
}
