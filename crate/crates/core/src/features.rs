//! The four traditional IR features every scorer receives next to its
//! neural score: BM25, binary overlap, idf-weighted overlap and bigram
//! overlap.

use serde::{Deserialize, Serialize};

use crate::text::{overlap_features, TokenizedText};

pub const N_EXTRA_FEATURES: usize = 4;

pub fn extra_features(
    bm25: f64,
    query: &TokenizedText,
    text: &TokenizedText,
    idf: impl Fn(&str) -> f64,
) -> [f64; N_EXTRA_FEATURES] {
    let [binary, weighted, bigram] = overlap_features(query, text, idf);
    [bm25, binary, weighted, bigram]
}

/// Per-feature min-max scaling fitted on training pools. Features whose
/// training range is empty map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(n: usize) -> Self {
        FeatureNormalizer {
            min: vec![0.0; n],
            max: vec![1.0; n],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for row in rows {
            if min.is_empty() {
                min = row.to_vec();
                max = row.to_vec();
                continue;
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if min.is_empty() {
            return FeatureNormalizer::identity(N_EXTRA_FEATURES);
        }
        FeatureNormalizer { min, max }
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let range = self.max[i] - self.min[i];
                if range > 0.0 {
                    (v - self.min[i]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_scaling() {
        let rows = [vec![2.0, 0.5], vec![4.0, 0.5]];
        let n = FeatureNormalizer::fit(rows.iter().map(Vec::as_slice));
        assert_eq!(n.apply(&[3.0, 0.5]), vec![0.5, 0.0]);
        assert_eq!(
            FeatureNormalizer::identity(2).apply(&[0.25, 7.0]),
            vec![0.25, 7.0]
        );
    }
}
