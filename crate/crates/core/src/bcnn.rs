//! BCNN snippet scorer: stacked convolution/pooling blocks applied with the
//! same filters to the query and the snippet, per-block cosine similarities
//! and a logistic output layer. Also sentence labeling from gold spans and
//! the document-aware snippet re-ordering.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddedTokens;
use crate::error::{arg_err, Error, Result};
use crate::features::N_EXTRA_FEATURES;
use crate::model::Ranker;
use crate::nn::{
    conv1d_wide, conv1d_wide_backward, cosine_backward, cosine_forward, masked_mean,
    masked_mean_backward, sigmoid, windowed_avg_pool, windowed_avg_pool_backward, xavier_uniform,
    Activation, CosineCache, Dense, DenseCache, ParamId, ParamSet, Tensor,
};
use crate::text::{split_sentences, tokenize, SentenceSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcnnConfig {
    /// Word-vector dimension; must match the embedding store.
    pub dim: usize,
    pub n_filters: usize,
    pub filter_width: usize,
    pub n_blocks: usize,
    pub max_snippet_tokens: usize,
    pub n_extra_features: usize,
}

impl Default for BcnnConfig {
    fn default() -> Self {
        BcnnConfig {
            dim: 200,
            n_filters: 50,
            filter_width: 4,
            n_blocks: 2,
            max_snippet_tokens: 40,
            n_extra_features: N_EXTRA_FEATURES,
        }
    }
}

impl BcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_width < 2 || self.n_blocks < 1 {
            return Err(arg_err("bcnn: need filter_width >= 2 and n_blocks >= 1"));
        }
        if self.dim < 1 || self.n_filters < 1 || self.max_snippet_tokens < 1 {
            return Err(arg_err(
                "bcnn: dim, n_filters and max_snippet_tokens must be >= 1",
            ));
        }
        Ok(())
    }
}

/// A token stream with a padding mask (true = real position).
#[derive(Debug, Clone)]
pub struct MaskedSeq {
    pub tokens: EmbeddedTokens,
    pub mask: Vec<bool>,
}

impl MaskedSeq {
    pub fn unpadded(tokens: EmbeddedTokens) -> Self {
        let mask = vec![true; tokens.len()];
        MaskedSeq { tokens, mask }
    }

    fn matrix(&self) -> Tensor {
        let mut m = self.tokens.to_matrix();
        for (i, &keep) in self.mask.iter().enumerate() {
            if !keep {
                m.row_mut(i).fill(0.0);
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct BcnnInput {
    pub query: MaskedSeq,
    pub snippet: MaskedSeq,
    pub extra: Vec<f64>,
}

impl BcnnInput {
    /// Builds an unpadded input; the snippet is cut to the configured
    /// maximum length, the query never is.
    pub fn new(
        store: &std::sync::Arc<crate::embed::EmbeddingStore>,
        query: &[String],
        snippet: &[String],
        cfg: &BcnnConfig,
        extra: Vec<f64>,
    ) -> Self {
        let snippet = &snippet[..snippet.len().min(cfg.max_snippet_tokens)];
        BcnnInput {
            query: MaskedSeq::unpadded(EmbeddedTokens::new(store, query)),
            snippet: MaskedSeq::unpadded(EmbeddedTokens::new(store, snippet)),
            extra,
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    /// tanh of the convolution output, `[T + w - 1, F]`.
    act: Tensor,
    feature: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StreamCache {
    blocks: Vec<BlockCache>,
}

impl StreamCache {
    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.blocks.iter().map(|b| b.feature.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct BcnnCache {
    pub query: StreamCache,
    pub snippet: StreamCache,
    pub sims: Vec<f64>,
    cos: Vec<CosineCache>,
    logistic: DenseCache,
}

#[derive(Debug, Clone)]
pub struct Bcnn {
    cfg: BcnnConfig,
    params: ParamSet,
    blocks: Vec<(ParamId, ParamId)>,
    logistic: Dense,
}

/// Wide convolution, tanh and windowed average pooling back to the input
/// length; masked rows of the result are zeroed. Returns the result and the
/// activations needed for the backward pass.
pub fn conv_block(
    seq: &Tensor,
    mask: &[bool],
    filters: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let w = filters.shape().get(1).copied().unwrap_or(0);
    let mut act = conv1d_wide(seq, filters, bias)?;
    act.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    let mut out = windowed_avg_pool(&act, w)?;
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            out.row_mut(i).fill(0.0);
        }
    }
    Ok((out, act))
}

/// Mean of the unmasked rows of a block output.
pub fn block_feature_vector(block_output: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    masked_mean(block_output, mask)
}

impl Bcnn {
    pub fn new<R: Rng>(cfg: BcnnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let (f, w) = (cfg.n_filters, cfg.filter_width);
        let blocks = (0..cfg.n_blocks)
            .map(|b| {
                let d_in = if b == 0 { cfg.dim } else { f };
                let filters = params.insert(
                    format!("block{b}.filters"),
                    xavier_uniform(&[f, w, d_in], w * d_in, f * w, rng),
                );
                let bias = params.insert(format!("block{b}.bias"), Tensor::zeros(&[f]));
                (filters, bias)
            })
            .collect();
        let logistic = Dense::new(
            &mut params,
            "logistic",
            cfg.n_blocks + cfg.n_extra_features,
            1,
            Activation::Linear,
            rng,
        );
        // logistic regression starts from zero so the similarity weights
        // take their sign from the first gradient
        let w = params.id_of("logistic.weight").expect("just inserted");
        params.value_mut(w).data_mut().fill(0.0);
        Ok(Bcnn {
            cfg,
            params,
            blocks,
            logistic,
        })
    }

    pub fn config(&self) -> &BcnnConfig {
        &self.cfg
    }

    /// Relevance probability `sigmoid(logit)`.
    pub fn probability(&self, input: &BcnnInput) -> Result<f64> {
        self.score(input).map(sigmoid)
    }

    fn stream(&self, seq: &MaskedSeq) -> Result<StreamCache> {
        if seq.tokens.is_empty() || !seq.mask.iter().any(|&m| m) {
            return Err(arg_err("bcnn needs non-empty query and snippet"));
        }
        if seq.tokens.dim() != self.cfg.dim {
            return Err(arg_err(format!(
                "embedding dim {} does not match model dim {}",
                seq.tokens.dim(),
                self.cfg.dim
            )));
        }
        let mut x = seq.matrix();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for &(fid, bid) in &self.blocks {
            let (out, act) = conv_block(
                &x,
                &seq.mask,
                self.params.value(fid),
                self.params.value(bid),
            )?;
            let feature = block_feature_vector(&out, &seq.mask)?;
            blocks.push(BlockCache {
                input: std::mem::replace(&mut x, out),
                act,
                feature,
            });
        }
        Ok(StreamCache { blocks })
    }

    fn stream_backward(&mut self, seq: &MaskedSeq, cache: &StreamCache, dfeatures: &[Vec<f64>]) {
        let w = self.cfg.filter_width;
        let len = seq.mask.len();
        let mut dout = Tensor::zeros(&[len, self.cfg.n_filters]);
        for (b, block) in cache.blocks.iter().enumerate().rev() {
            let dmean = masked_mean_backward(&seq.mask, &dfeatures[b]);
            for (d, m) in dout.data_mut().iter_mut().zip(dmean.data()) {
                *d += m;
            }
            for (i, &keep) in seq.mask.iter().enumerate() {
                if !keep {
                    dout.row_mut(i).fill(0.0);
                }
            }
            let mut dact = windowed_avg_pool_backward(block.act.shape()[0], w, &dout)
                .expect("shapes fixed by forward pass");
            for (d, a) in dact.data_mut().iter_mut().zip(block.act.data()) {
                *d *= 1.0 - a * a;
            }
            let (fid, bid) = self.blocks[b];
            let grads = conv1d_wide_backward(
                &block.input,
                self.params.value(fid),
                self.params.value(bid),
                &dact,
            )
            .expect("shapes fixed by forward pass");
            for (g, d) in self
                .params
                .grad_mut(fid)
                .iter_mut()
                .zip(grads.filters.data())
            {
                *g += d;
            }
            for (g, d) in self.params.grad_mut(bid).iter_mut().zip(grads.bias.data()) {
                *g += d;
            }
            dout = grads.input;
        }
    }
}

impl Ranker for Bcnn {
    type Input = BcnnInput;
    type Cache = BcnnCache;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Returns the logit; see [`Bcnn::probability`].
    fn forward(&self, input: &BcnnInput) -> Result<(f64, BcnnCache)> {
        if input.extra.len() != self.cfg.n_extra_features {
            return Err(arg_err(format!(
                "bcnn expects {} extra features, got {}",
                self.cfg.n_extra_features,
                input.extra.len()
            )));
        }
        let query = self.stream(&input.query)?;
        let snippet = self.stream(&input.snippet)?;
        let cos: Vec<CosineCache> = query
            .features()
            .zip(snippet.features())
            .map(|(q, s)| cosine_forward(q, s))
            .collect();
        let sims: Vec<f64> = cos.iter().map(|c| c.value).collect();
        let mut x = sims.clone();
        x.extend_from_slice(&input.extra);
        let (out, logistic) = self.logistic.forward(&self.params, &x)?;
        Ok((
            out[0],
            BcnnCache {
                query,
                snippet,
                sims,
                cos,
                logistic,
            },
        ))
    }

    fn backward(&mut self, input: &BcnnInput, cache: &BcnnCache, dscore: f64) {
        let dx = self
            .logistic
            .backward(&mut self.params, &cache.logistic, &[dscore]);
        let f = self.cfg.n_filters;
        let mut dq = vec![vec![0.0; f]; self.blocks.len()];
        let mut ds = vec![vec![0.0; f]; self.blocks.len()];
        for (b, ((q, s), c)) in cache
            .query
            .features()
            .zip(cache.snippet.features())
            .zip(&cache.cos)
            .enumerate()
        {
            cosine_backward(q, s, c, dx[b], &mut dq[b], &mut ds[b]);
        }
        self.stream_backward(&input.query, &cache.query, &dq);
        self.stream_backward(&input.snippet, &cache.snippet, &ds);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnippetLabel {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetCandidate {
    pub doc_id: String,
    pub sentence_index: usize,
    pub span: SentenceSpan,
    pub tokens: Vec<String>,
    pub doc_score: f64,
    pub label: Option<SnippetLabel>,
}

/// Splits `text` into sentence candidates (tokens cut to `max_tokens`).
/// Sentences without tokens are dropped.
pub fn sentence_candidates(
    doc_id: &str,
    text: &str,
    doc_score: f64,
    max_tokens: usize,
) -> Vec<SnippetCandidate> {
    split_sentences(text)
        .into_iter()
        .enumerate()
        .filter_map(|(i, span)| {
            let tokens = tokenize(&span.text).truncated(max_tokens).tokens;
            (!tokens.is_empty()).then(|| SnippetCandidate {
                doc_id: doc_id.to_string(),
                sentence_index: i,
                span,
                tokens,
                doc_score,
                label: None,
            })
        })
        .collect()
}

/// A sentence is relevant iff its character span shares at least one
/// character with a gold span `[begin, end)`.
pub fn label_sentences(
    doc_id: &str,
    text: &str,
    gold: &[(usize, usize)],
    max_tokens: usize,
) -> Result<Vec<SnippetCandidate>> {
    let n_chars = text.chars().count();
    for &(b, e) in gold {
        if b >= e || e > n_chars {
            return Err(Error::Data {
                doc_id: doc_id.to_string(),
                msg: format!("gold span [{b}, {e}) outside document of {n_chars} characters"),
            });
        }
    }
    let mut out = sentence_candidates(doc_id, text, 0.0, max_tokens);
    for c in &mut out {
        let hit = gold
            .iter()
            .any(|&(b, e)| b < c.span.end_char && c.span.start_char < e);
        c.label = Some(if hit {
            SnippetLabel::Relevant
        } else {
            SnippetLabel::Irrelevant
        });
    }
    Ok(out)
}

/// Keeps the `k_s` best candidates by BCNN score (ties: lower doc id, then
/// lower sentence index). With `postprocess`, the survivors are then grouped
/// by document in descending document score, best BCNN score first within
/// a document.
pub fn rank_and_postprocess(
    mut candidates: Vec<(SnippetCandidate, f64)>,
    k_s: usize,
    postprocess: bool,
) -> Vec<(SnippetCandidate, f64)> {
    candidates.sort_by(|(a, sa), (b, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then(a.sentence_index.cmp(&b.sentence_index))
    });
    candidates.truncate(k_s);
    if postprocess {
        candidates.sort_by(|(a, sa), (b, sb)| {
            b.doc_score
                .partial_cmp(&a.doc_score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then(sb.partial_cmp(sa).unwrap_or(Ordering::Equal))
                .then(a.sentence_index.cmp(&b.sentence_index))
        });
    }
    candidates
}
