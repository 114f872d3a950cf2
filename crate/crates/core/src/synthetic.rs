//! Seeded synthetic data with a planted lexical signal: relevant
//! candidates contain the query terms, non-relevant ones at most one of
//! them. Used by the learning tests and the `synth` command.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bcnn::BcnnInput;
use crate::embed::{DefaultIdf, EmbeddingStore};
use crate::error::Result;
use crate::features::N_EXTRA_FEATURES;
use crate::index::Document;
use crate::pipeline::models::DocInput;
use crate::pipeline::{DocModel, LabeledPool, QrelEntry, Query, SnippetModel, SnippetRef};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Words `w0 .. w{vocab_size-1}`; the first half are topic words that
    /// queries draw from, the second half filler.
    pub vocab_size: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub candidates_per_query: usize,
    pub relevant_per_query: usize,
    pub query_len: usize,
    pub candidate_len: usize,
    /// Length of every embedding vector.
    pub embedding_norm: f64,
    /// Query terms planted in each relevant candidate, at least.
    pub min_relevant_hits: usize,
    /// Relevant candidates contain the query verbatim as one phrase
    /// instead of its terms scattered over a short window.
    pub phrase: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 13,
            vocab_size: 400,
            dim: 50,
            n_train: 20,
            n_dev: 10,
            candidates_per_query: 50,
            relevant_per_query: 10,
            query_len: 3,
            candidate_len: 40,
            embedding_norm: 3.0,
            min_relevant_hits: 3,
            phrase: false,
        }
    }
}

impl SyntheticConfig {
    /// Short sentences instead of documents, each relevant one carrying
    /// the query as a phrase.
    pub fn snippets() -> Self {
        SyntheticConfig {
            dim: 100,
            candidate_len: 8,
            phrase: true,
            ..SyntheticConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthQuery {
    pub id: String,
    pub tokens: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SynthTask {
    pub store: Arc<EmbeddingStore>,
    pub train: Vec<SynthQuery>,
    pub dev: Vec<SynthQuery>,
}

fn word(i: usize) -> String {
    format!("w{i}")
}

/// Gaussian directions scaled to length `norm` for every word; topic words get idf 3,
/// filler words idf 0.5.
pub fn synthetic_store(
    vocab_size: usize,
    dim: usize,
    norm: f64,
    rng: &mut impl Rng,
) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(dim);
    let mut idf = HashMap::new();
    for i in 0..vocab_size {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x *= norm / n);
        store.insert(&word(i), &v).expect("dim matches");
        idf.insert(word(i), if i < vocab_size / 2 { 3.0 } else { 0.5 });
    }
    store.set_idf_table(idf, DefaultIdf::Auto);
    store
}

struct Sampler {
    topic: usize,
    vocab: usize,
}

impl Sampler {
    fn filler(&self, rng: &mut impl Rng) -> String {
        word(rng.gen_range(self.topic..self.vocab))
    }

    fn distractor(&self, rng: &mut impl Rng, query: &[usize]) -> String {
        loop {
            let w = rng.gen_range(0..self.topic);
            if !query.contains(&w) {
                return word(w);
            }
        }
    }

    /// `len` tokens of filler and distractors with `planted` query terms
    /// placed inside one window of `window` consecutive positions, in
    /// order when `window` equals the number of planted terms.
    fn candidate(
        &self,
        rng: &mut impl Rng,
        query: &[usize],
        planted: &[usize],
        len: usize,
        window: usize,
    ) -> Vec<String> {
        let mut toks: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    self.distractor(rng, query)
                } else {
                    self.filler(rng)
                }
            })
            .collect();
        let window = window.min(len);
        let start = rng.gen_range(0..=len - window);
        let mut slots: Vec<usize> = (start..start + window).collect();
        if window != planted.len() {
            slots.shuffle(rng);
        }
        for (&slot, &w) in slots.iter().zip(planted) {
            toks[slot] = word(w);
        }
        toks
    }
}

fn make_queries(
    cfg: &SyntheticConfig,
    n: usize,
    prefix: &str,
    min_hits: usize,
    rng: &mut impl Rng,
) -> Vec<SynthQuery> {
    let s = Sampler {
        topic: cfg.vocab_size / 2,
        vocab: cfg.vocab_size,
    };
    (0..n)
        .map(|qi| {
            let mut q: Vec<usize> = (0..s.topic).collect();
            q.shuffle(rng);
            q.truncate(cfg.query_len);
            let mut cands: Vec<(Vec<String>, bool)> = Vec::new();
            for _ in 0..cfg.relevant_per_query {
                if cfg.phrase {
                    cands.push((s.candidate(rng, &q, &q, cfg.candidate_len, q.len()), true));
                    continue;
                }
                let mut planted = q.clone();
                let extra = rng.gen_range(0..=cfg.query_len);
                for _ in 0..extra {
                    planted.push(q[rng.gen_range(0..q.len())]);
                }
                let hits = rng.gen_range(min_hits..=planted.len());
                planted.truncate(hits);
                let window = (planted.len() * 2).max(4);
                cands.push((
                    s.candidate(rng, &q, &planted, cfg.candidate_len, window),
                    true,
                ));
            }
            for _ in cfg.relevant_per_query..cfg.candidates_per_query {
                let planted: Vec<usize> = if rng.gen_bool(0.5) {
                    vec![q[rng.gen_range(0..q.len())]]
                } else {
                    vec![]
                };
                cands.push((
                    s.candidate(rng, &q, &planted, cfg.candidate_len, cfg.candidate_len),
                    false,
                ));
            }
            cands.shuffle(rng);
            let (candidates, labels) = cands.into_iter().unzip();
            SynthQuery {
                id: format!("{prefix}{qi}"),
                tokens: q.into_iter().map(word).collect(),
                candidates,
                labels,
            }
        })
        .collect()
}

/// Document reranking task: relevant documents contain every query term
/// (some repeated) clustered in a short window.
pub fn rerank_task(cfg: &SyntheticConfig) -> SynthTask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let store = synthetic_store(cfg.vocab_size, cfg.dim, cfg.embedding_norm, &mut rng);
    let min_hits = cfg.min_relevant_hits.min(cfg.query_len);
    SynthTask {
        train: make_queries(cfg, cfg.n_train, "train", min_hits, &mut rng),
        dev: make_queries(cfg, cfg.n_dev, "dev", min_hits, &mut rng),
        store: Arc::new(store),
    }
}

/// Sentence ranking task: relevant sentences contain at least two query
/// terms.
pub fn snippet_task(cfg: &SyntheticConfig) -> SynthTask {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let store = synthetic_store(cfg.vocab_size, cfg.dim, cfg.embedding_norm, &mut rng);
    let min_hits = cfg.min_relevant_hits.min(cfg.query_len);
    SynthTask {
        train: make_queries(cfg, cfg.n_train, "train", min_hits, &mut rng),
        dev: make_queries(cfg, cfg.n_dev, "dev", min_hits, &mut rng),
        store: Arc::new(store),
    }
}

fn pools<I>(
    queries: &[SynthQuery],
    mut input: impl FnMut(&SynthQuery, &[String]) -> Result<I>,
) -> Result<Vec<LabeledPool<I>>> {
    queries
        .iter()
        .map(|q| {
            Ok(LabeledPool {
                query_id: q.id.clone(),
                inputs: q
                    .candidates
                    .iter()
                    .map(|c| input(q, c))
                    .collect::<Result<_>>()?,
                labels: q.labels.clone(),
            })
        })
        .collect()
}

/// Train and dev pools for a document model. Extra features are zero so
/// that only the neural part can pick up the signal.
pub fn doc_pools(
    task: &SynthTask,
    model: &DocModel,
) -> Result<(Vec<LabeledPool<DocInput>>, Vec<LabeledPool<DocInput>>)> {
    let zeros = [0.0; N_EXTRA_FEATURES];
    let f = |q: &SynthQuery, c: &[String]| model.input(&task.store, &q.tokens, c, &zeros, true);
    Ok((pools(&task.train, f)?, pools(&task.dev, f)?))
}

pub fn snippet_pools(
    task: &SynthTask,
    model: &SnippetModel,
) -> Result<(Vec<LabeledPool<BcnnInput>>, Vec<LabeledPool<BcnnInput>>)> {
    let zeros = [0.0; N_EXTRA_FEATURES];
    let f = |q: &SynthQuery, c: &[String]| Ok(model.input(&task.store, &q.tokens, c, &zeros, true));
    Ok((pools(&task.train, f)?, pools(&task.dev, f)?))
}

/// A small title/abstract collection with queries, judgements and gold
/// snippet spans, shaped like the real input files.
#[derive(Debug, Clone)]
pub struct ToyCollection {
    pub documents: Vec<Document>,
    pub train_queries: Vec<Query>,
    pub dev_queries: Vec<Query>,
    pub qrels: Vec<QrelEntry>,
    pub store: EmbeddingStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_train_queries: usize,
    pub n_dev_queries: usize,
    pub relevant_per_query: usize,
    pub sentences_per_doc: usize,
    pub sentence_len: usize,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 5,
            n_docs: 30,
            n_train_queries: 2,
            n_dev_queries: 1,
            relevant_per_query: 5,
            sentences_per_doc: 4,
            sentence_len: 8,
            vocab_size: 200,
            dim: 8,
        }
    }
}

fn sentence(tokens: &[String]) -> String {
    let mut s = tokens.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

/// Documents are `Study N.` followed by several sentences. Each query owns
/// `relevant_per_query` documents, one sentence of which carries all its
/// terms; that sentence is the gold snippet.
pub fn toy_collection(cfg: &ToyConfig) -> Result<ToyCollection> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let store = synthetic_store(cfg.vocab_size, cfg.dim, 1.0, &mut rng);
    let s = Sampler {
        topic: cfg.vocab_size / 2,
        vocab: cfg.vocab_size,
    };
    let n_queries = cfg.n_train_queries + cfg.n_dev_queries;
    let mut topic: Vec<usize> = (0..s.topic).collect();
    topic.shuffle(&mut rng);
    let query_terms: Vec<Vec<usize>> = (0..n_queries)
        .map(|i| topic[i * 3..i * 3 + 3].to_vec())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; cfg.n_docs];
    for q in 0..n_queries {
        for k in 0..cfg.relevant_per_query {
            let d = q * cfg.relevant_per_query + k;
            if d < cfg.n_docs {
                owner[d] = Some(q);
            }
        }
    }
    owner.shuffle(&mut rng);
    let all_terms: Vec<usize> = query_terms.concat();
    let mut documents = Vec::with_capacity(cfg.n_docs);
    let mut gold: Vec<Vec<String>> = vec![Vec::new(); n_queries];
    let mut spans: Vec<Vec<SnippetRef>> = vec![Vec::new(); n_queries];
    for (d, own) in owner.iter().enumerate() {
        let id = format!("doc{d:03}");
        let title = format!("Study {d}.");
        let gold_sentence = own.map(|_| rng.gen_range(0..cfg.sentences_per_doc));
        let mut abstract_text = String::new();
        let mut gold_span = None;
        for si in 0..cfg.sentences_per_doc {
            let toks = match (own, gold_sentence) {
                (Some(q), Some(g)) if g == si => {
                    let planted = &query_terms[*q];
                    s.candidate(
                        &mut rng,
                        &all_terms,
                        planted,
                        cfg.sentence_len,
                        cfg.sentence_len,
                    )
                }
                _ => {
                    let mut toks: Vec<String> =
                        (0..cfg.sentence_len).map(|_| s.filler(&mut rng)).collect();
                    // partial matches give BM25 non-relevant candidates
                    if rng.gen_bool(0.3) {
                        let t = all_terms[rng.gen_range(0..all_terms.len())];
                        toks[rng.gen_range(0..cfg.sentence_len)] = word(t);
                    }
                    toks
                }
            };
            if !abstract_text.is_empty() {
                abstract_text.push(' ');
            }
            let begin = title.chars().count() + 1 + abstract_text.chars().count();
            let sent = sentence(&toks);
            if gold_sentence == Some(si) {
                gold_span = Some((begin, begin + sent.chars().count()));
            }
            abstract_text.push_str(&sent);
        }
        if let (Some(q), Some((b, e))) = (own, gold_span) {
            gold[*q].push(id.clone());
            spans[*q].push(SnippetRef {
                doc_id: id.clone(),
                begin_char: b,
                end_char: e,
            });
        }
        documents.push(Document::new(id, title, abstract_text)?);
    }
    let queries: Vec<Query> = query_terms
        .iter()
        .enumerate()
        .map(|(i, terms)| Query {
            id: format!("q{i}"),
            body: format!(
                "What is known about {}?",
                terms
                    .iter()
                    .map(|&t| word(t))
                    .collect::<Vec<_>>()
                    .join(" and ")
            ),
        })
        .collect();
    let qrels = queries
        .iter()
        .zip(gold.into_iter().zip(spans))
        .map(|(q, (relevant_docs, gold_snippets))| QrelEntry {
            query_id: q.id.clone(),
            relevant_docs,
            gold_snippets,
        })
        .collect();
    let (train_queries, dev_queries) = {
        let mut q = queries;
        let dev = q.split_off(cfg.n_train_queries);
        (q, dev)
    };
    Ok(ToyCollection {
        documents,
        train_queries,
        dev_queries,
        qrels,
        store,
    })
}
