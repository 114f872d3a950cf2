//! JSON-lines formats for queries, relevance judgements and runs, plus a
//! TREC-style text run writer.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub body: String,
}

/// A character span `[begin_char, end_char)` of `title + " " + abstract`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SnippetRef {
    pub doc_id: String,
    pub begin_char: usize,
    pub end_char: usize,
}

impl SnippetRef {
    pub fn overlaps(&self, other: &SnippetRef) -> bool {
        self.doc_id == other.doc_id
            && self.begin_char < other.end_char
            && other.begin_char < self.end_char
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrelEntry {
    pub query_id: String,
    pub relevant_docs: Vec<String>,
    #[serde(default)]
    pub gold_snippets: Vec<SnippetRef>,
}

/// Judgements keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    entries: BTreeMap<String, QrelEntry>,
}

impl Qrels {
    pub fn new(entries: impl IntoIterator<Item = QrelEntry>) -> Self {
        Qrels {
            entries: entries
                .into_iter()
                .map(|e| (e.query_id.clone(), e))
                .collect(),
        }
    }

    pub fn get(&self, query_id: &str) -> Option<&QrelEntry> {
        self.entries.get(query_id)
    }

    pub fn relevant(&self, query_id: &str) -> HashSet<String> {
        self.get(query_id)
            .map(|e| e.relevant_docs.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Gold spans of one document for one query, as `(begin, end)` pairs.
    pub fn gold_spans(&self, query_id: &str, doc_id: &str) -> Vec<(usize, usize)> {
        self.get(query_id)
            .map(|e| {
                e.gold_snippets
                    .iter()
                    .filter(|s| s.doc_id == doc_id)
                    .map(|s| (s.begin_char, s.end_char))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QrelEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub documents: Vec<String>,
    #[serde(default)]
    pub snippets: Vec<SnippetRef>,
    /// Reranker scores aligned with `documents`, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub document_scores: Vec<f64>,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut writer: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_jsonl_path<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(std::fs::File::open(path)?)
}

pub fn write_jsonl_path<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    write_jsonl(items, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// `query_id Q0 doc_id rank score tag`, one line per returned document.
/// Without stored scores the score column is `1 / rank`.
pub fn write_trec<W: Write>(run: &[RunEntry], tag: &str, mut writer: W) -> Result<()> {
    for entry in run {
        for (i, doc) in entry.documents.iter().enumerate() {
            let score = entry
                .document_scores
                .get(i)
                .copied()
                .unwrap_or(1.0 / (i + 1) as f64);
            writeln!(
                writer,
                "{} Q0 {} {} {} {}",
                entry.query_id,
                doc,
                i + 1,
                score,
                tag
            )?;
        }
    }
    writer.flush()?;
    Ok(())
}
