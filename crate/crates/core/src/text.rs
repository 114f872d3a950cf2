//! Tokenization, sentence splitting and lexical overlap features.
//!
//! All offsets are character (Unicode scalar) offsets into the original
//! string, half-open `[start, end)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Characters treated as token separators in addition to whitespace.
pub const SEPARATORS: &[char] = &[
    '.', ',', '?', ';', '*', '!', '%', '^', '&', '+', '(', ')', '[', ']', '{', '}', ':', '-', '"',
    '\'', '/', '\\', '|', '<', '>', '=', '#', '@', '~',
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps only the first `n` tokens.
    pub fn truncated(&self, n: usize) -> TokenizedText {
        TokenizedText {
            tokens: self.tokens.iter().take(n).cloned().collect(),
            spans: self.spans.iter().take(n).copied().collect(),
        }
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || SEPARATORS.contains(&c)
}

/// Lowercases `text` and splits it on whitespace and [`SEPARATORS`].
pub fn tokenize(text: &str) -> TokenizedText {
    let mut out = TokenizedText::default();
    let mut current = String::new();
    let mut start = 0;
    for (pos, c) in text.chars().enumerate() {
        if is_separator(c) {
            if !current.is_empty() {
                out.tokens.push(std::mem::take(&mut current));
                out.spans.push((start, pos));
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        out.tokens.push(current);
        out.spans.push((start, text.chars().count()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start_char: usize,
    pub end_char: usize,
    pub text: String,
}

/// Abbreviations after which a period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "fig.", "figs.", "al.", "vs.", "cf.", "approx.", "ca.", "dr.", "mr.", "mrs.",
    "ms.", "prof.", "no.", "nos.", "ref.", "refs.", "eq.", "eqs.", "sp.", "spp.", "st.", "vol.",
    "pp.", "resp.",
];

/// Splits after `.`, `!` or `?` when followed by whitespace and then an
/// uppercase letter or digit. A period closing an abbreviation from the
/// stoplist, or a lone capital letter (`E. coli`), never splits.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut bounds = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') && is_boundary(&chars, i) {
            bounds.push(i + 1);
        }
        i += 1;
    }
    bounds.push(chars.len());

    let mut out = Vec::new();
    let mut start = 0;
    for end in bounds {
        let mut s = start;
        while s < end && chars[s].is_whitespace() {
            s += 1;
        }
        let mut e = end;
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(SentenceSpan {
                start_char: s,
                end_char: e,
                text: chars[s..e].iter().collect(),
            });
        }
        start = end;
    }
    out
}

fn is_boundary(chars: &[char], i: usize) -> bool {
    let mut j = i + 1;
    if j >= chars.len() || !chars[j].is_whitespace() {
        return false;
    }
    while j < chars.len() && chars[j].is_whitespace() {
        j += 1;
    }
    if j >= chars.len() || !(chars[j].is_uppercase() || chars[j].is_ascii_digit()) {
        return false;
    }
    if chars[i] != '.' {
        return true;
    }
    // the whitespace-delimited word ending at this period
    let mut w = i;
    while w > 0 && !chars[w - 1].is_whitespace() {
        w -= 1;
    }
    let word: String = chars[w..=i]
        .iter()
        .skip_while(|c| matches!(c, '(' | '[' | '"' | '\''))
        .collect();
    let mut letters = word.chars();
    if let (Some(first), Some('.'), None) = (letters.next(), letters.next(), letters.next()) {
        if first.is_uppercase() {
            return false;
        }
    }
    !ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn unique_in_order(tokens: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| seen.insert(*t))
        .collect()
}

/// `[binary overlap, idf-weighted overlap, bigram overlap]` of the unique
/// query tokens (and adjacent query pairs) found in `text`.
pub fn overlap_features(
    query: &TokenizedText,
    text: &TokenizedText,
    idf: impl Fn(&str) -> f64,
) -> [f64; 3] {
    let q = unique_in_order(&query.tokens);
    if q.is_empty() {
        return [0.0; 3];
    }
    let doc: HashSet<&str> = text.tokens.iter().map(String::as_str).collect();
    let matched: Vec<&str> = q.iter().copied().filter(|t| doc.contains(t)).collect();
    let binary = matched.len() as f64 / q.len() as f64;

    let total_idf: f64 = q.iter().map(|t| idf(t)).sum();
    let matched_idf: f64 = matched.iter().map(|t| idf(t)).sum();
    let weighted = if total_idf > 0.0 {
        matched_idf / total_idf
    } else {
        0.0
    };

    let q_bigrams: HashSet<(&str, &str)> = query
        .tokens
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
        .collect();
    let d_bigrams: HashSet<(&str, &str)> = text
        .tokens
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
        .collect();
    let bigram = q_bigrams.intersection(&d_bigrams).count() as f64 / q_bigrams.len().max(1) as f64;

    [binary, weighted, bigram]
}
