//! Rank-position voting across runs.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use super::data::{RunEntry, SnippetRef};

/// Each run gives `depth + 1 - rank` votes to its items at ranks
/// `1..=depth`. Items are ordered by total votes, then by their best rank
/// in any single run, then by key. Only items that received votes are
/// returned.
pub fn ensemble_vote<K: Clone + Eq + Hash + Ord>(runs: &[Vec<K>], depth: usize) -> Vec<K> {
    let mut tally: HashMap<&K, (usize, usize)> = HashMap::new();
    for run in runs {
        for (i, key) in run.iter().take(depth).enumerate() {
            let e = tally.entry(key).or_insert((0, usize::MAX));
            e.0 += depth - i;
            e.1 = e.1.min(i + 1);
        }
    }
    let mut items: Vec<(&K, (usize, usize))> = tally.into_iter().collect();
    items.sort_by(|(ka, (va, ra)), (kb, (vb, rb))| vb.cmp(va).then(ra.cmp(rb)).then(ka.cmp(kb)));
    items.into_iter().map(|(k, _)| k.clone()).collect()
}

/// Total votes per item, for reporting.
pub fn vote_counts<K: Clone + Eq + Hash>(runs: &[Vec<K>], depth: usize) -> HashMap<K, usize> {
    let mut out = HashMap::new();
    for run in runs {
        for (i, key) in run.iter().take(depth).enumerate() {
            *out.entry(key.clone()).or_insert(0) += depth - i;
        }
    }
    out
}

/// Votes per query over several runs: documents are cut to `k_d` and
/// snippets to `k_s`. Queries appear in the order of their first
/// occurrence across the runs.
pub fn ensemble_runs(
    runs: &[Vec<RunEntry>],
    depth: usize,
    k_d: usize,
    k_s: usize,
) -> Vec<RunEntry> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_query: BTreeMap<&str, (Vec<Vec<String>>, Vec<Vec<SnippetRef>>)> = BTreeMap::new();
    for run in runs {
        for entry in run {
            let slot = by_query.entry(&entry.query_id).or_insert_with(|| {
                order.push(&entry.query_id);
                Default::default()
            });
            slot.0.push(entry.documents.clone());
            slot.1.push(entry.snippets.clone());
        }
    }
    order
        .into_iter()
        .map(|q| {
            let (docs, snippets) = &by_query[q];
            let mut documents = ensemble_vote(docs, depth);
            documents.truncate(k_d);
            let mut snippets = ensemble_vote(snippets, depth);
            snippets.truncate(k_s);
            RunEntry {
                query_id: q.to_string(),
                documents,
                snippets,
                document_scores: Vec::new(),
            }
        })
        .collect()
}
