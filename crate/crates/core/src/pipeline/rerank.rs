//! The end-to-end flow: BM25 pre-retrieval, neural document reranking,
//! optional confidence filtering, sentence scoring and snippet
//! post-processing. Also prepares labeled pools for training.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::config::{BiorankConfig, PipelineConfig};
use super::data::{Qrels, Query, RunEntry, SnippetRef};
use super::models::{DocInput, DocModel, ModelConfigs, SnippetModel};
use super::train::{train, LabeledPool, TrainConfig, TrainOutcome};
use crate::bcnn::{
    label_sentences, rank_and_postprocess, sentence_candidates, BcnnInput, SnippetCandidate,
    SnippetLabel,
};
use crate::drmm::confidence_filter;
use crate::embed::{DefaultIdf, EmbeddingStore};
use crate::error::{Error, Result};
use crate::features::{extra_features, FeatureNormalizer, N_EXTRA_FEATURES};
use crate::index::{Bm25Config, Document, InvertedIndex, ScoredDoc};
use crate::model::{ModelKind, Ranker};
use crate::nn::sigmoid;
use crate::text::{tokenize, TokenizedText};

/// Read-only state shared by every query.
#[derive(Debug, Clone)]
pub struct Resources {
    pub index: InvertedIndex,
    pub store: Arc<EmbeddingStore>,
    pub bm25: Bm25Config,
}

/// A query as seen by the BM25 stage and by the neural models.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub text: TokenizedText,
    /// Tokens without stopwords (all tokens if nothing else remains).
    pub neural: Vec<String>,
}

impl Resources {
    /// Without an idf table in the store, one is derived from the index.
    pub fn new(index: InvertedIndex, mut store: EmbeddingStore, bm25: Bm25Config) -> Self {
        if !store.has_idf_table() {
            let stemmer = index.stemmer();
            let mut table: HashMap<String, f64> = index
                .terms()
                .map(|t| (t.to_string(), index.idf_value(t)))
                .collect();
            for tok in store.vocab_tokens() {
                let stem = crate::index::Stemmer::stem(&stemmer, tok).into_owned();
                table
                    .entry(tok.clone())
                    .or_insert_with(|| index.idf_value(&stem));
            }
            store.set_idf_table(table, DefaultIdf::Fixed(index.idf_value("")));
        }
        Resources {
            index,
            store: Arc::new(store),
            bm25,
        }
    }

    pub fn prepare_query(&self, body: &str) -> PreparedQuery {
        let text = tokenize(body);
        let stop = self.index.stopwords();
        let mut neural: Vec<String> = text
            .tokens
            .iter()
            .filter(|t| !stop.contains(*t))
            .cloned()
            .collect();
        if neural.is_empty() {
            neural = text.tokens.clone();
        }
        PreparedQuery { text, neural }
    }

    pub fn doc_features(
        &self,
        q: &PreparedQuery,
        doc: &Document,
    ) -> Result<[f64; N_EXTRA_FEATURES]> {
        let bm25 = self.index.bm25_score(&self.bm25, &q.text, &doc.id)?;
        Ok(extra_features(bm25, &q.text, &doc.tokens, |t| {
            self.term_idf(t)
        }))
    }

    pub fn snippet_features(&self, q: &PreparedQuery, sentence: &str) -> [f64; N_EXTRA_FEATURES] {
        let toks = tokenize(sentence);
        let bm25 = self.index.bm25_tokens(&self.bm25, &q.text, &toks.tokens);
        extra_features(bm25, &q.text, &toks, |t| self.term_idf(t))
    }

    fn term_idf(&self, token: &str) -> f64 {
        self.index
            .idf_value(&crate::index::Stemmer::stem(&self.index.stemmer(), token))
    }

    fn document(&self, id: &str) -> Result<&Document> {
        self.index
            .document(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub documents: Vec<ScoredDoc>,
    pub snippets: Vec<(SnippetCandidate, f64)>,
}

impl QueryResult {
    pub fn to_run_entry(&self, query_id: &str) -> RunEntry {
        RunEntry {
            query_id: query_id.to_string(),
            documents: self.documents.iter().map(|d| d.id.clone()).collect(),
            snippets: self
                .snippets
                .iter()
                .map(|(c, _)| SnippetRef {
                    doc_id: c.doc_id.clone(),
                    begin_char: c.span.start_char,
                    end_char: c.span.end_char,
                })
                .collect(),
            document_scores: self.documents.iter().map(|d| d.score).collect(),
        }
    }
}

/// Scores documents with the reranker; documents that cannot be scored
/// (e.g. no in-vocabulary terms) follow the scored ones in BM25 order.
fn rerank_documents(
    res: &Resources,
    q: &PreparedQuery,
    pool: &[ScoredDoc],
    model: &DocModel,
    zero_extra: bool,
) -> Result<Vec<ScoredDoc>> {
    let scored: Vec<Option<f64>> = pool
        .par_iter()
        .map(|d| -> Result<Option<f64>> {
            let doc = res.document(&d.id)?;
            let raw = res.doc_features(q, doc)?;
            let input = model.input(&res.store, &q.neural, &doc.tokens.tokens, &raw, zero_extra)?;
            Ok(model.net.score(&input).ok())
        })
        .collect::<Result<_>>()?;
    let mut ok: Vec<(usize, f64)> = Vec::new();
    let mut failed = Vec::new();
    for (i, s) in scored.into_iter().enumerate() {
        match s {
            Some(s) => ok.push((i, s)),
            None => failed.push(i),
        }
    }
    if !failed.is_empty() {
        log::warn!(
            "{} documents could not be scored by the reranker",
            failed.len()
        );
    }
    ok.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let min = ok.last().map_or(0.0, |&(_, s)| s);
    let mut out: Vec<ScoredDoc> = ok
        .into_iter()
        .map(|(i, s)| ScoredDoc {
            id: pool[i].id.clone(),
            score: s,
        })
        .collect();
    out.extend(failed.into_iter().enumerate().map(|(k, i)| ScoredDoc {
        id: pool[i].id.clone(),
        score: min - 1.0 - k as f64,
    }));
    Ok(out)
}

/// Runs every stage for one query. A query without BM25 hits yields empty
/// lists.
pub fn rerank_pipeline(
    query: &Query,
    res: &Resources,
    doc_model: Option<&DocModel>,
    snippet_model: Option<&SnippetModel>,
    cfg: &PipelineConfig,
) -> Result<QueryResult> {
    cfg.validate()?;
    let q = res.prepare_query(&query.body);
    let pool = res.index.retrieve_top_n(&res.bm25, &q.text, cfg.n);
    if pool.is_empty() {
        return Ok(QueryResult {
            documents: vec![],
            snippets: vec![],
        });
    }
    let mut ranked = match doc_model {
        Some(m) => rerank_documents(res, &q, &pool, m, cfg.zero_extra_features)?,
        None => pool,
    };
    if let Some(ext) = doc_model
        .and_then(DocModel::drmm_config)
        .map(|c| &c.extension)
        .filter(|e| e.confidence_enabled)
    {
        ranked = confidence_filter(&ranked, ext.t_d, ext.t_c);
    }
    ranked.truncate(cfg.k_d);

    let snippets = match snippet_model {
        None => Vec::new(),
        Some(m) => {
            let mut cands = Vec::new();
            for d in &ranked {
                let doc = res.document(&d.id)?;
                cands.extend(sentence_candidates(
                    &d.id,
                    &doc.text(),
                    d.score,
                    m.net.config().max_snippet_tokens,
                ));
            }
            let scored: Vec<(SnippetCandidate, f64)> = cands
                .into_par_iter()
                .map(|c| {
                    let raw = res.snippet_features(&q, &c.span.text);
                    let input = m.input(
                        &res.store,
                        &q.neural,
                        &c.tokens,
                        &raw,
                        cfg.zero_extra_features,
                    );
                    let p = m.net.score(&input).map(sigmoid).unwrap_or(0.0);
                    (c, p)
                })
                .collect();
            rank_and_postprocess(scored, cfg.k_s, cfg.postprocess_snippets)
        }
    };
    Ok(QueryResult {
        documents: ranked,
        snippets,
    })
}

/// Runs all queries; output order follows the input.
pub fn run_queries(
    queries: &[Query],
    res: &Resources,
    doc_model: Option<&DocModel>,
    snippet_model: Option<&SnippetModel>,
    cfg: &PipelineConfig,
) -> Result<Vec<RunEntry>> {
    queries
        .par_iter()
        .map(|q| {
            rerank_pipeline(q, res, doc_model, snippet_model, cfg).map(|r| r.to_run_entry(&q.id))
        })
        .collect()
}

/// BM25 pool of one query with relevance labels and unscaled features.
#[derive(Debug, Clone)]
pub struct RawDocPool {
    pub query_id: String,
    pub query: PreparedQuery,
    pub doc_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub features: Vec<[f64; N_EXTRA_FEATURES]>,
}

pub fn raw_doc_pools(
    res: &Resources,
    queries: &[Query],
    qrels: &Qrels,
    n: usize,
) -> Result<Vec<RawDocPool>> {
    queries
        .iter()
        .map(|query| {
            let q = res.prepare_query(&query.body);
            let relevant = qrels.relevant(&query.id);
            let pool = res.index.retrieve_top_n(&res.bm25, &q.text, n);
            let mut features = Vec::with_capacity(pool.len());
            for d in &pool {
                features.push(res.doc_features(&q, res.document(&d.id)?)?);
            }
            Ok(RawDocPool {
                query_id: query.id.clone(),
                labels: pool.iter().map(|d| relevant.contains(&d.id)).collect(),
                doc_ids: pool.into_iter().map(|d| d.id).collect(),
                query: q,
                features,
            })
        })
        .collect()
}

pub fn fit_normalizer<'a>(
    features: impl IntoIterator<Item = &'a [f64; N_EXTRA_FEATURES]>,
) -> FeatureNormalizer {
    FeatureNormalizer::fit(features.into_iter().map(|f| f.as_slice()))
}

pub fn doc_inputs(
    res: &Resources,
    model: &DocModel,
    pools: &[RawDocPool],
    zero_extra: bool,
) -> Result<Vec<LabeledPool<DocInput>>> {
    pools
        .iter()
        .map(|p| {
            let inputs = p
                .doc_ids
                .iter()
                .zip(&p.features)
                .map(|(id, f)| {
                    model.input(
                        &res.store,
                        &p.query.neural,
                        &res.document(id)?.tokens.tokens,
                        f,
                        zero_extra,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LabeledPool {
                query_id: p.query_id.clone(),
                inputs,
                labels: p.labels.clone(),
            })
        })
        .collect()
}

/// Labeled sentences of one query: from the top BM25 documents plus every
/// relevant document.
#[derive(Debug, Clone)]
pub struct RawSnippetPool {
    pub query_id: String,
    pub query: PreparedQuery,
    pub candidates: Vec<SnippetCandidate>,
    pub features: Vec<[f64; N_EXTRA_FEATURES]>,
}

impl RawSnippetPool {
    pub fn labels(&self) -> Vec<bool> {
        self.candidates
            .iter()
            .map(|c| c.label == Some(SnippetLabel::Relevant))
            .collect()
    }
}

pub fn raw_snippet_pools(
    res: &Resources,
    queries: &[Query],
    qrels: &Qrels,
    pool_docs: usize,
    max_tokens: usize,
) -> Result<Vec<RawSnippetPool>> {
    queries
        .iter()
        .map(|query| {
            let q = res.prepare_query(&query.body);
            let mut docs: BTreeSet<String> = res
                .index
                .retrieve_top_n(&res.bm25, &q.text, pool_docs)
                .into_iter()
                .map(|d| d.id)
                .collect();
            let relevant: HashSet<String> = qrels.relevant(&query.id);
            docs.extend(
                relevant
                    .iter()
                    .filter(|id| res.index.document(id).is_some())
                    .cloned(),
            );
            let mut candidates = Vec::new();
            for id in &docs {
                let doc = res.document(id)?;
                let gold = qrels.gold_spans(&query.id, id);
                candidates.extend(label_sentences(id, &doc.text(), &gold, max_tokens)?);
            }
            let features = candidates
                .iter()
                .map(|c| res.snippet_features(&q, &c.span.text))
                .collect();
            Ok(RawSnippetPool {
                query_id: query.id.clone(),
                query: q,
                candidates,
                features,
            })
        })
        .collect()
}

pub fn snippet_inputs(
    res: &Resources,
    model: &SnippetModel,
    pools: &[RawSnippetPool],
    zero_extra: bool,
) -> Vec<LabeledPool<BcnnInput>> {
    pools
        .iter()
        .map(|p| LabeledPool {
            query_id: p.query_id.clone(),
            inputs: p
                .candidates
                .iter()
                .zip(&p.features)
                .map(|(c, f)| model.input(&res.store, &p.query.neural, &c.tokens, f, zero_extra))
                .collect(),
            labels: p.labels(),
        })
        .collect()
}

/// Training queries and judgements, with optional dev counterparts for
/// epoch selection.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub train_queries: &'a [Query],
    pub train_qrels: &'a Qrels,
    pub dev_queries: &'a [Query],
    pub dev_qrels: &'a Qrels,
}

pub fn train_doc_model<R: Rng>(
    res: &Resources,
    data: TrainingData<'_>,
    cfg: &BiorankConfig,
    train_cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(DocModel, TrainOutcome)> {
    let kind = cfg.pipeline.reranker.model_kind();
    let configs = ModelConfigs {
        pacrr: cfg.pacrr.clone(),
        drmm: cfg.drmm.clone(),
        bcnn: cfg.bcnn.clone(),
    };
    let train_raw = raw_doc_pools(res, data.train_queries, data.train_qrels, cfg.pipeline.n)?;
    let dev_raw = raw_doc_pools(res, data.dev_queries, data.dev_qrels, cfg.pipeline.n)?;
    let norm = fit_normalizer(train_raw.iter().flat_map(|p| &p.features));
    let mut model = DocModel::new(kind, configs.doc_config(kind, res.store.dim())?, norm, rng)?;
    if cfg.pipeline.reranker.confidence_filter() {
        model.set_confidence(true)?;
    }
    let zero = cfg.pipeline.zero_extra_features;
    let train_pools = doc_inputs(res, &model, &train_raw, zero)?;
    let dev_pools = doc_inputs(res, &model, &dev_raw, zero)?;
    let outcome = train(&mut model.net, &train_pools, &dev_pools, train_cfg, rng)?;
    Ok((model, outcome))
}

pub fn train_snippet_model<R: Rng>(
    res: &Resources,
    data: TrainingData<'_>,
    cfg: &BiorankConfig,
    train_cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(SnippetModel, TrainOutcome)> {
    let max_tokens = cfg.bcnn.max_snippet_tokens;
    let pool_docs = cfg.pipeline.snippet_pool_docs;
    let train_raw = raw_snippet_pools(
        res,
        data.train_queries,
        data.train_qrels,
        pool_docs,
        max_tokens,
    )?;
    let dev_raw = raw_snippet_pools(res, data.dev_queries, data.dev_qrels, pool_docs, max_tokens)?;
    let norm = fit_normalizer(train_raw.iter().flat_map(|p| &p.features));
    let mut model = SnippetModel::new(cfg.bcnn.clone(), res.store.dim(), norm, rng)?;
    let zero = cfg.pipeline.zero_extra_features;
    let train_pools = snippet_inputs(res, &model, &train_raw, zero);
    let dev_pools = snippet_inputs(res, &model, &dev_raw, zero);
    let outcome = train(&mut model.net, &train_pools, &dev_pools, train_cfg, rng)?;
    Ok((model, outcome))
}

/// Trains the model family named by `kind` (document reranker or BCNN).
pub fn train_kind<R: Rng>(
    kind: ModelKind,
    res: &Resources,
    data: TrainingData<'_>,
    cfg: &BiorankConfig,
    rng: &mut R,
) -> Result<(crate::model::ModelFile, TrainOutcome)> {
    if kind == ModelKind::Bcnn {
        let (m, o) = train_snippet_model(res, data, cfg, &cfg.snippet_train_config(), rng)?;
        let mut f = m.to_file()?;
        f.chosen_epoch = Some(o.chosen_epoch);
        Ok((f, o))
    } else {
        let mut cfg = cfg.clone();
        if cfg.pipeline.reranker.model_kind() != kind {
            cfg.pipeline.reranker = super::config::RerankerKind::ALL
                .into_iter()
                .find(|r| r.model_kind() == kind)
                .expect("every document model has a reranker");
        }
        let (m, o) = train_doc_model(res, data, &cfg, &cfg.doc_train_config(), rng)?;
        let mut f = m.to_file();
        f.chosen_epoch = Some(o.chosen_epoch);
        Ok((f, o))
    }
}
