//! MAP@10 with a fixed denominator, macro F1 and epsilon-smoothed GMAP.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::data::{Qrels, RunEntry, SnippetRef};

pub const MAP_DEPTH: usize = 10;
pub const DEFAULT_GMAP_EPSILON: f64 = 1e-5;

/// Average precision over the first 10 results, always divided by 10.
pub fn eval_map10<S: AsRef<str>>(run: &[S], relevant: &HashSet<String>) -> f64 {
    let hits: Vec<bool> = run
        .iter()
        .take(MAP_DEPTH)
        .map(|d| relevant.contains(d.as_ref()))
        .collect();
    ap_from_hits(&hits)
}

/// `sum over hit ranks r of (hits up to r) / r`, divided by 10.
pub fn ap_from_hits(hits: &[bool]) -> f64 {
    let mut found = 0usize;
    let mut total = 0.0;
    for (i, &h) in hits.iter().take(MAP_DEPTH).enumerate() {
        if h {
            found += 1;
            total += found as f64 / (i + 1) as f64;
        }
    }
    total / MAP_DEPTH as f64
}

/// F1 of the returned set against the relevant set; 0 when either side is
/// empty or nothing matches.
pub fn eval_f1<S: AsRef<str>>(run: &[S], relevant: &HashSet<String>) -> f64 {
    let returned: HashSet<&str> = run.iter().map(AsRef::as_ref).collect();
    let hits = returned.iter().filter(|d| relevant.contains(**d)).count();
    f1_from_counts(hits, returned.len(), relevant.len())
}

pub fn f1_from_counts(hits: usize, returned: usize, relevant: usize) -> f64 {
    if hits == 0 || returned == 0 || relevant == 0 {
        return 0.0;
    }
    let p = hits as f64 / returned as f64;
    let r = (hits as f64 / relevant as f64).min(1.0);
    2.0 * p * r / (p + r)
}

/// `exp(mean(ln(ap + epsilon)))`; 0 for an empty list.
pub fn eval_gmap(ap_values: &[f64], epsilon: f64) -> f64 {
    if ap_values.is_empty() {
        return 0.0;
    }
    let mean = ap_values.iter().map(|a| (a + epsilon).ln()).sum::<f64>() / ap_values.len() as f64;
    mean.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub ap: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryEval>,
    pub map: f64,
    pub f1: f64,
    pub gmap: f64,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn from_queries(per_query: Vec<QueryEval>, epsilon: f64) -> Self {
        let n = per_query.len();
        let aps: Vec<f64> = per_query.iter().map(|q| q.ap).collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>| {
            if n == 0 {
                0.0
            } else {
                xs.sum::<f64>() / n as f64
            }
        };
        EvalReport {
            map: mean(&mut aps.iter().copied()),
            f1: mean(&mut per_query.iter().map(|q| q.f1)),
            gmap: eval_gmap(&aps, epsilon),
            n_queries: n,
            per_query,
        }
    }

    pub fn table(&self, title: &str) -> String {
        let mut s = format!("{title}\n{:<24} {:>8} {:>8}\n", "query", "AP", "F1");
        for q in &self.per_query {
            s += &format!("{:<24} {:>8.4} {:>8.4}\n", q.query_id, q.ap, q.f1);
        }
        s += &format!(
            "queries={}  MAP={:.4}  F1={:.4}  GMAP={:.4}\n",
            self.n_queries, self.map, self.f1, self.gmap
        );
        s
    }
}

/// Document and snippet reports for a run. Queries judged in `qrels` but
/// missing from the run count with zero scores; run entries for unjudged
/// queries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub documents: EvalReport,
    pub snippets: EvalReport,
}

pub fn evaluate_run(run: &[RunEntry], qrels: &Qrels, epsilon: f64) -> RunEvaluation {
    let by_query: BTreeMap<&str, &RunEntry> =
        run.iter().map(|e| (e.query_id.as_str(), e)).collect();
    let mut docs = Vec::new();
    let mut snips = Vec::new();
    for entry in qrels.iter() {
        let relevant: HashSet<String> = entry.relevant_docs.iter().cloned().collect();
        let empty = RunEntry {
            query_id: entry.query_id.clone(),
            documents: vec![],
            snippets: vec![],
            document_scores: vec![],
        };
        let r = by_query
            .get(entry.query_id.as_str())
            .copied()
            .unwrap_or(&empty);
        docs.push(QueryEval {
            query_id: entry.query_id.clone(),
            ap: eval_map10(&r.documents, &relevant),
            f1: eval_f1(&r.documents, &relevant),
        });
        snips.push(snippet_eval(
            &entry.query_id,
            &r.snippets,
            &entry.gold_snippets,
        ));
    }
    RunEvaluation {
        documents: EvalReport::from_queries(docs, epsilon),
        snippets: EvalReport::from_queries(snips, epsilon),
    }
}

/// A returned snippet is a hit when it overlaps any gold snippet of the
/// same document; the relevant count is the number of gold snippets.
pub fn snippet_eval(query_id: &str, returned: &[SnippetRef], gold: &[SnippetRef]) -> QueryEval {
    let top = &returned[..returned.len().min(MAP_DEPTH)];
    let hits: Vec<bool> = top
        .iter()
        .map(|s| gold.iter().any(|g| g.overlaps(s)))
        .collect();
    let n_hits = hits.iter().filter(|&&h| h).count();
    QueryEval {
        query_id: query_id.to_string(),
        ap: ap_from_hits(&hits),
        f1: f1_from_counts(n_hits, top.len(), gold.len()),
    }
}
