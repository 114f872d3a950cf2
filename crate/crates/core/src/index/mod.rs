//! Inverted index with BM25 scoring; the first-stage retriever.

mod stem;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use stem::{Stemmer, StemmerKind};

use crate::error::{Error, Result};
use crate::text::{tokenize, TokenizedText};

const INDEX_FORMAT: &str = "biorank-index";
const INDEX_VERSION: u32 = 1;

/// The default English stopword list, one word per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// A title + abstract article. The indexed text is `title + " " + abstract`
/// and all character offsets refer to that string.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub tokens: TokenizedText,
}

#[derive(Serialize, Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(rename = "abstract", default)]
    abstract_text: String,
}

impl Document {
    /// Rejects documents whose abstract is empty.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        abstract_text: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let title = title.into();
        let abstract_text = abstract_text.into();
        if abstract_text.trim().is_empty() {
            return Err(Error::Data {
                doc_id: id,
                msg: "empty abstract".into(),
            });
        }
        let tokens = tokenize(&format!("{title} {abstract_text}"));
        if tokens.is_empty() {
            return Err(Error::Data {
                doc_id: id,
                msg: "no tokens".into(),
            });
        }
        Ok(Document {
            id,
            title,
            abstract_text,
            tokens,
        })
    }

    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }

    fn raw(&self) -> RawDocument {
        RawDocument {
            id: self.id.clone(),
            title: self.title.clone(),
            abstract_text: self.abstract_text.clone(),
        }
    }
}

/// Outcome of reading a JSON-lines corpus.
#[derive(Debug, Default)]
pub struct CorpusLoad {
    pub documents: Vec<Document>,
    /// `(line, id)` of documents dropped for having no abstract.
    pub rejected: Vec<(usize, String)>,
}

/// Reads `{"id", "title", "abstract"}` objects, one per line.
pub fn read_corpus<R: Read>(reader: R) -> Result<CorpusLoad> {
    let mut out = CorpusLoad::default();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        match Document::new(raw.id.clone(), raw.title, raw.abstract_text) {
            Ok(d) => out.documents.push(d),
            Err(Error::Data { .. }) => out.rejected.push((n + 1, raw.id)),
            Err(e) => return Err(e),
        }
    }
    if !out.rejected.is_empty() {
        log::warn!(
            "discarded {} documents without an abstract",
            out.rejected.len()
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Bm25Config { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in [`InvertedIndex::documents`].
    pub doc: u32,
    pub tf: u32,
}

/// A scored document id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

/// Immutable BM25 index. Documents are kept sorted by id, so posting lists
/// ordered by document position are also ordered by id.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    documents: Vec<Document>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    stopwords: BTreeSet<String>,
    stemmer: StemmerKind,
}

impl InvertedIndex {
    pub fn build(corpus: Vec<Document>, stopwords: BTreeSet<String>) -> Result<Self> {
        Self::build_with_stemmer(corpus, stopwords, StemmerKind::Identity)
    }

    /// Stopwords are left out of the postings but still count towards
    /// document length.
    pub fn build_with_stemmer(
        mut corpus: Vec<Document>,
        stopwords: BTreeSet<String>,
        stemmer: StemmerKind,
    ) -> Result<Self> {
        corpus.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = corpus.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateDocument(w[0].id.clone()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (di, doc) in corpus.iter().enumerate() {
            doc_lengths.push(doc.tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for tok in &doc.tokens.tokens {
                if stopwords.contains(tok) {
                    continue;
                }
                *tf.entry(stemmer.stem(tok).into_owned()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: di as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(InvertedIndex {
            documents: corpus,
            postings,
            doc_lengths,
            avg_doc_length,
            stopwords,
            stemmer,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn stemmer(&self) -> StemmerKind {
        self.stemmer
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.position(id).map(|i| &self.documents[i])
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.position(id).map(|i| self.doc_lengths[i])
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Document frequency of an index term.
    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`; unseen terms have `df = 0`.
    pub fn idf_value(&self, term: &str) -> f64 {
        idf_formula(self.n_docs(), self.df(term))
    }

    /// Unique, non-stopword, stemmed query terms in first-occurrence order.
    pub fn query_terms(&self, query: &TokenizedText) -> Vec<String> {
        let mut seen = HashSet::new();
        query
            .tokens
            .iter()
            .filter(|t| !self.stopwords.contains(*t))
            .map(|t| self.stemmer.stem(t).into_owned())
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    pub fn bm25_score(&self, cfg: &Bm25Config, query: &TokenizedText, doc_id: &str) -> Result<f64> {
        let di = self
            .position(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let mut score = 0.0;
        for term in self.query_terms(query) {
            let plist = self.postings(&term);
            if let Ok(p) = plist.binary_search_by(|p| p.doc.cmp(&(di as u32))) {
                score += self.term_weight(cfg, plist.len(), plist[p].tf, self.doc_lengths[di]);
            }
        }
        Ok(score)
    }

    /// BM25 of an arbitrary token sequence (e.g. one sentence) against the
    /// collection statistics of this index.
    pub fn bm25_tokens(&self, cfg: &Bm25Config, query: &TokenizedText, tokens: &[String]) -> f64 {
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens.iter().filter(|t| !self.stopwords.contains(*t)) {
            *tf.entry(self.stemmer.stem(t).into_owned()).or_default() += 1;
        }
        self.query_terms(query)
            .iter()
            .filter_map(|term| {
                let df = self.df(term);
                let f = *tf.get(term)?;
                (df > 0).then(|| self.term_weight(cfg, df, f, tokens.len() as u32))
            })
            .sum()
    }

    fn term_weight(&self, cfg: &Bm25Config, df: usize, tf: u32, len: u32) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - cfg.b + cfg.b * len as f64 / self.avg_doc_length;
        idf_formula(self.n_docs(), df) * (tf * (cfg.k1 + 1.0)) / (tf + cfg.k1 * norm)
    }

    /// All documents containing at least one query term, best first; ties
    /// by ascending document id.
    pub fn score_all(&self, cfg: &Bm25Config, query: &TokenizedText) -> Vec<ScoredDoc> {
        let mut acc = vec![0.0; self.n_docs()];
        let mut hit = vec![false; self.n_docs()];
        for term in self.query_terms(query) {
            let plist = self.postings(&term);
            for p in plist {
                let di = p.doc as usize;
                acc[di] += self.term_weight(cfg, plist.len(), p.tf, self.doc_lengths[di]);
                hit[di] = true;
            }
        }
        let mut out: Vec<(usize, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|&(i, s)| hit[i] && s > 0.0)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter()
            .map(|(i, score)| ScoredDoc {
                id: self.documents[i].id.clone(),
                score,
            })
            .collect()
    }

    /// The `n` best documents by BM25.
    pub fn retrieve_top_n(
        &self,
        cfg: &Bm25Config,
        query: &TokenizedText,
        n: usize,
    ) -> Vec<ScoredDoc> {
        let mut all = self.score_all(cfg, query);
        all.truncate(n);
        all
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            stemmer: self.stemmer,
            stopwords: self.stopwords.iter().cloned().collect(),
            documents: self.documents.iter().map(Document::raw).collect(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, p)| (t.clone(), p.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: IndexFile = serde_json::from_reader(BufReader::new(reader))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(Error::Format(format!(
                "expected {INDEX_FORMAT} v{INDEX_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let documents = file
            .documents
            .into_iter()
            .map(|r| Document::new(r.id, r.title, r.abstract_text))
            .collect::<Result<Vec<_>>>()?;
        if documents.len() != file.doc_lengths.len() {
            return Err(Error::Format("document/length count mismatch".into()));
        }
        let postings = file
            .postings
            .into_iter()
            .map(|(t, p)| {
                (
                    t,
                    p.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect(),
                )
            })
            .collect();
        Ok(InvertedIndex {
            avg_doc_length: mean_length(&file.doc_lengths),
            documents,
            postings,
            doc_lengths: file.doc_lengths,
            stopwords: file.stopwords.into_iter().collect(),
            stemmer: file.stemmer,
        })
    }

    pub fn save_path(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(f)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(std::fs::File::open(path)?)
    }
}

/// On-disk layout of a saved index.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    stemmer: StemmerKind,
    stopwords: Vec<String>,
    documents: Vec<RawDocument>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    total as f64 / lengths.len() as f64
}

pub fn idf_formula(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, "", text).unwrap()
    }

    #[test]
    fn single_doc_postings() {
        let idx = InvertedIndex::build(vec![doc("d1", "a b a")], BTreeSet::new()).unwrap();
        assert_eq!(idx.postings("a"), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn stopwords_count_towards_length() {
        let stop: BTreeSet<String> = ["a".to_string()].into();
        let idx = InvertedIndex::build(vec![doc("d1", "a b a")], stop).unwrap();
        assert!(idx.postings("a").is_empty());
        assert_eq!(idx.postings("b").len(), 1);
        assert_eq!(idx.doc_length("d1"), Some(3));
    }

    #[test]
    fn empty_corpus() {
        let idx = InvertedIndex::build(vec![], BTreeSet::new()).unwrap();
        assert_eq!(idx.n_docs(), 0);
        let q = tokenize("anything");
        assert!(idx
            .retrieve_top_n(&Bm25Config::default(), &q, 10)
            .is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err =
            InvertedIndex::build(vec![doc("x", "a"), doc("x", "b")], BTreeSet::new()).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocument(id) if id == "x"));
    }

    #[test]
    fn empty_abstract_rejected() {
        assert!(matches!(
            Document::new("t", "title only", "  "),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn idf_values() {
        assert!((idf_formula(1, 1) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((idf_formula(1, 1) - 0.2877).abs() < 1e-4);
        assert!((idf_formula(100, 0) - 202f64.ln()).abs() < 1e-12);
        assert!((idf_formula(100, 0) - 5.308).abs() < 1e-3);
        for df in 0..100 {
            assert!(idf_formula(100, df) > idf_formula(100, df + 1));
        }
    }

    #[test]
    fn bm25_single_doc_equals_idf() {
        let idx = InvertedIndex::build(vec![doc("d1", "x y z")], BTreeSet::new()).unwrap();
        let cfg = Bm25Config::default();
        let s = idx.bm25_score(&cfg, &tokenize("y"), "d1").unwrap();
        assert!((s - idx.idf_value("y")).abs() < 1e-15);
        assert_eq!(
            idx.bm25_score(&cfg, &tokenize("absent"), "d1").unwrap(),
            0.0
        );
        assert!(matches!(
            idx.bm25_score(&cfg, &tokenize("y"), "nope"),
            Err(Error::UnknownDocument(_))
        ));
    }

    #[test]
    fn ties_ordered_by_id() {
        let idx = InvertedIndex::build(
            vec![doc("b", "gene x"), doc("a", "gene y"), doc("c", "other")],
            BTreeSet::new(),
        )
        .unwrap();
        let top = idx.retrieve_top_n(&Bm25Config::default(), &tokenize("gene"), 10);
        let ids: Vec<_> = top.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(top[0].score, top[1].score);
    }

    #[test]
    fn save_load_roundtrip() {
        let idx = InvertedIndex::build_with_stemmer(
            vec![
                doc("d1", "cells divide quickly"),
                doc("d2", "the cell cycle"),
            ],
            default_stopwords(),
            StemmerKind::Plural,
        )
        .unwrap();
        let mut buf = Vec::new();
        idx.save(&mut buf).unwrap();
        let back = InvertedIndex::load(buf.as_slice()).unwrap();
        let cfg = Bm25Config::default();
        let q = tokenize("cell cycles");
        assert_eq!(idx.score_all(&cfg, &q), back.score_all(&cfg, &q));
        assert_eq!(back.df("cell"), 2);
        assert!(back.postings("the").is_empty());
    }

    #[test]
    fn corpus_reader_rejects_title_only() {
        let data = r#"{"id":"1","title":"T","abstract":"Some text."}
{"id":"2","title":"Only title","abstract":""}
"#;
        let load = read_corpus(data.as_bytes()).unwrap();
        assert_eq!(load.documents.len(), 1);
        assert_eq!(load.rejected, vec![(2, "2".to_string())]);
    }
}
