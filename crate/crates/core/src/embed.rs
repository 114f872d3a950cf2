//! Pre-trained word vectors and the IDF table used by the neural models.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::nn::Tensor;

/// What `idf_of` returns for tokens missing from the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefaultIdf {
    /// The largest idf in the table (unknown words are treated as rare).
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Vec<f64>,
    zero: Vec<f64>,
    idf_table: HashMap<String, f64>,
    default_idf: f64,
    /// Tokens seen more than once while loading; the first vector wins.
    pub duplicates: usize,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            vocab: HashMap::new(),
            tokens: Vec::new(),
            matrix: Vec::new(),
            zero: vec![0.0; dim],
            idf_table: HashMap::new(),
            default_idf: 0.0,
            duplicates: 0,
        }
    }

    /// Adds a vector; returns false (and counts a duplicate) if the token
    /// already exists.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(dim_err(format!(
                "vector for `{token}` has {} values, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vocab.contains_key(token) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.vocab.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.matrix.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn row_index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn zero_vector(&self) -> &[f64] {
        &self.zero
    }

    /// The token's vector and an out-of-vocabulary flag. Unknown tokens map
    /// to the zero vector.
    pub fn lookup(&self, token: &str) -> (&[f64], bool) {
        match self.row_index(token) {
            Some(i) => (self.row(i), false),
            None => (&self.zero, true),
        }
    }

    pub fn set_idf_table(&mut self, table: HashMap<String, f64>, default: DefaultIdf) {
        self.default_idf = match default {
            DefaultIdf::Fixed(v) => v,
            DefaultIdf::Auto => table.values().copied().fold(0.0, f64::max),
        };
        self.idf_table = table;
    }

    pub fn has_idf_table(&self) -> bool {
        !self.idf_table.is_empty()
    }

    pub fn vocab_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn default_idf(&self) -> f64 {
        self.default_idf
    }

    pub fn idf_of(&self, token: &str) -> f64 {
        self.idf_table
            .get(token)
            .copied()
            .unwrap_or(self.default_idf)
    }

    /// Parses `token v1 .. vD` lines with an optional `count dim` header.
    pub fn read_text<R: Read>(reader: R) -> Result<Self> {
        let mut store: Option<EmbeddingStore> = None;
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let dim = fields[1].parse().expect("checked above");
                store = Some(EmbeddingStore::new(dim));
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    msg: format!("bad number: {e}"),
                })?;
            let s = store.get_or_insert_with(|| EmbeddingStore::new(values.len()));
            if values.len() != s.dim {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("expected {} values, found {}", s.dim, values.len()),
                });
            }
            s.insert(fields[0], &values)?;
        }
        let store = store.ok_or_else(|| Error::Format("embedding file is empty".into()))?;
        if store.duplicates > 0 {
            log::warn!(
                "{} duplicate tokens in embedding file ignored",
                store.duplicates
            );
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }

    /// Writes the store with a `count dim` header. Values use Rust's
    /// shortest round-trip formatting, so reading back is lossless.
    pub fn write_text<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{} {}", self.tokens.len(), self.dim)?;
        for (i, tok) in self.tokens.iter().enumerate() {
            write!(writer, "{tok}")?;
            for v in self.row(i) {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }
}

/// A token sequence resolved against a shared store: cheap to clone and
/// keep around as model input.
#[derive(Debug, Clone)]
pub struct EmbeddedTokens {
    store: Arc<EmbeddingStore>,
    rows: Vec<Option<usize>>,
}

impl EmbeddedTokens {
    pub fn new(store: &Arc<EmbeddingStore>, tokens: &[String]) -> Self {
        EmbeddedTokens {
            store: Arc::clone(store),
            rows: tokens.iter().map(|t| store.row_index(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        match self.rows[i] {
            Some(r) => self.store.row(r),
            None => self.store.zero_vector(),
        }
    }

    pub fn is_oov(&self, i: usize) -> bool {
        self.rows[i].is_none()
    }

    /// `[T, D]` matrix of the vectors.
    pub fn to_matrix(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.dim());
        for i in 0..self.len() {
            data.extend_from_slice(self.vector(i));
        }
        Tensor::new(vec![self.len(), self.dim()], data).expect("rows have store dim")
    }
}

/// Reads `token<TAB>idf` lines.
pub fn read_idf_table<R: Read>(reader: R) -> Result<HashMap<String, f64>> {
    let mut table = HashMap::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (tok, val) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: "expected token<TAB>idf".into(),
        })?;
        let v: f64 = val.trim().parse().map_err(|e| Error::Parse {
            line: n + 1,
            msg: format!("bad idf: {e}"),
        })?;
        table.entry(tok.to_string()).or_insert(v);
    }
    Ok(table)
}

pub fn write_idf_table<W: Write>(table: &[(String, f64)], mut writer: W) -> Result<()> {
    for (tok, v) in table {
        writeln!(writer, "{tok}\t{v}")?;
    }
    Ok(())
}

/// `u.v / (|u||v|)`, or 0 if either norm is below `1e-12`. Clamped to
/// `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(dim_err(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(crate::nn::cosine_forward(u, v).value.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_with_and_without_header() {
        let plain = "a 1 0 0\nb 0 1 0\n";
        let s = EmbeddingStore::read_text(plain.as_bytes()).unwrap();
        assert_eq!((s.vocab_size(), s.dim()), (2, 3));
        let with = "2 3\na 1 0 0\nb 0 1 0\n";
        let h = EmbeddingStore::read_text(with.as_bytes()).unwrap();
        assert_eq!((h.vocab_size(), h.dim()), (2, 3));
        assert_eq!(h.lookup("b").0, s.lookup("b").0);
    }

    #[test]
    fn inconsistent_dim_reports_line() {
        let bad = "a 1 0 0\nb 0 1\n";
        match EmbeddingStore::read_text(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicates_keep_first() {
        let s = EmbeddingStore::read_text("a 1 2\na 3 4\n".as_bytes()).unwrap();
        assert_eq!(s.duplicates, 1);
        assert_eq!(s.lookup("a").0, &[1.0, 2.0]);
    }

    #[test]
    fn oov_is_zero_and_flagged() {
        let s = EmbeddingStore::read_text("a 1 2\n".as_bytes()).unwrap();
        assert_eq!(s.lookup("a"), (&[1.0, 2.0][..], false));
        assert_eq!(s.lookup("zzz"), (&[0.0, 0.0][..], true));
        assert_eq!(cosine(s.lookup("zzz").0, s.lookup("a").0).unwrap(), 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn idf_defaults() {
        let mut s = EmbeddingStore::new(2);
        let table: HashMap<String, f64> = [("a".to_string(), 1.5), ("b".to_string(), 4.0)].into();
        s.set_idf_table(table.clone(), DefaultIdf::Auto);
        assert_eq!(s.idf_of("a"), 1.5);
        assert_eq!(s.idf_of("unknown"), 4.0);
        s.set_idf_table(table, DefaultIdf::Fixed(7.0));
        assert_eq!(s.idf_of("unknown"), 7.0);
    }

    #[test]
    fn idf_file_parse() {
        let t = read_idf_table("gene\t2.5\nprotein\t1.25\n".as_bytes()).unwrap();
        assert_eq!(t["gene"], 2.5);
        assert!(read_idf_table("gene 2.5\n".as_bytes()).is_err());
    }

    #[test]
    fn write_read_roundtrip() {
        let mut s = EmbeddingStore::new(3);
        s.insert("x", &[0.1, -1.0 / 3.0, 1e-7]).unwrap();
        s.insert("y", &[std::f64::consts::PI, 0.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        let back = EmbeddingStore::read_text(buf.as_slice()).unwrap();
        for tok in ["x", "y"] {
            for (a, b) in s.lookup(tok).0.iter().zip(back.lookup(tok).0) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
