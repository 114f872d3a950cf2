//! Independent reference implementations used as test oracles. Everything
//! here is written from the model definitions with plain loops over
//! nested vectors; nothing is shared with the library's layers.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use biorank_core::embed::EmbeddingStore;
use biorank_core::nn::ParamSet;

pub fn dotp(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let na = dotp(a, a).sqrt();
    let nb = dotp(b, b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dotp(a, b) / (na * nb)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Embedding of a token, zeros when out of vocabulary.
pub fn emb(store: &EmbeddingStore, tok: &str) -> Vec<f64> {
    match store.row_index(tok) {
        Some(r) => store.row(r).to_vec(),
        None => vec![0.0; store.dim()],
    }
}

pub fn param(params: &ParamSet, name: &str) -> (Vec<usize>, Vec<f64>) {
    let p = params
        .by_name(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    (p.value.shape().to_vec(), p.value.data().to_vec())
}

/// `W x + b` with `W` stored row-major as `[out, in]`.
fn affine(params: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
    let (shape, w) = param(params, &format!("{name}.weight"));
    let (_, b) = param(params, &format!("{name}.bias"));
    let (rows, cols) = (shape[0], shape[1]);
    assert_eq!(cols, x.len(), "{name}");
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut s = b[r];
        for c in 0..cols {
            s += w[r * cols + c] * x[c];
        }
        out[r] = s;
    }
    out
}

/// Layers `{name}.0`, `{name}.1`, ...; hidden layers use `act`, the last
/// one is linear.
fn mlp(params: &ParamSet, name: &str, x: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    let mut n = 0;
    while params.by_name(&format!("{name}.{n}.weight")).is_some() {
        n += 1;
    }
    let mut h = x.to_vec();
    for i in 0..n {
        h = affine(params, &format!("{name}.{i}"), &h);
        if i + 1 < n {
            h = h.into_iter().map(act).collect();
        }
    }
    h
}

fn top_k_desc(mut v: Vec<f64>, k: usize) -> Vec<f64> {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v.resize(k, 0.0);
    v
}

pub struct PacrrShape {
    pub l_q: usize,
    pub l_d: usize,
    pub l_g: usize,
    pub k: usize,
    pub per_term: bool,
}

/// PACRR score over the full `l_q x l_d` grid, zero outside the real cells.
pub fn pacrr_oracle(
    s: &PacrrShape,
    params: &ParamSet,
    store: &EmbeddingStore,
    query: &[String],
    doc: &[String],
    extra: &[f64],
) -> f64 {
    let q_len = query.len().min(s.l_q);
    let d_len = doc.len().min(s.l_d);
    let mut grid = vec![vec![0.0; s.l_d]; s.l_q];
    let mut real = vec![false; s.l_q];
    for i in 0..q_len {
        real[i] = store.row_index(&query[i]).is_some();
        for j in 0..d_len {
            if real[i] && store.row_index(&doc[j]).is_some() {
                grid[i][j] = cos(&emb(store, &query[i]), &emb(store, &doc[j]));
            }
        }
    }
    let at = |r: usize, c: usize| {
        if r < s.l_q && c < s.l_d {
            grid[r][c]
        } else {
            0.0
        }
    };
    let width = s.l_g * s.k + 1;
    let mut rows = vec![vec![0.0; width]; s.l_q];
    for i in 0..s.l_q {
        if !real[i] {
            continue;
        }
        let mut row = top_k_desc(grid[i].clone(), s.k);
        for n in 2..=s.l_g {
            let (shape, w) = param(params, &format!("conv{n}.filters"));
            let f = shape[0];
            let mut best = vec![f64::NEG_INFINITY; s.l_d];
            for j in 0..s.l_d {
                for fi in 0..f {
                    let mut acc = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            acc += w[fi * n * n + a * n + b] * at(i + a, j + b);
                        }
                    }
                    best[j] = best[j].max(acc);
                }
            }
            row.extend(top_k_desc(best, s.k));
        }
        rows[i][..width - 1].copy_from_slice(&row);
    }
    let live: Vec<usize> = (0..s.l_q).filter(|&i| real[i]).collect();
    if !live.is_empty() {
        let p = softmax(
            &live
                .iter()
                .map(|&i| store.idf_of(&query[i]))
                .collect::<Vec<_>>(),
        );
        for (&i, v) in live.iter().zip(p) {
            rows[i][width - 1] = v;
        }
    }
    if s.per_term {
        let mut x: Vec<f64> = (0..s.l_q)
            .map(|i| {
                if real[i] {
                    mlp(params, "term_mlp", &rows[i], relu)[0]
                } else {
                    0.0
                }
            })
            .collect();
        x.extend_from_slice(extra);
        affine(params, "combine", &x)[0]
    } else {
        let mut x: Vec<f64> = rows.concat();
        x.extend_from_slice(extra);
        mlp(params, "mlp", &x, relu)[0]
    }
}

fn gate(params: &ParamSet, store: &EmbeddingStore, query: &[String]) -> Vec<f64> {
    let (_, w) = param(params, "gate.weight");
    let d = store.dim();
    let z: Vec<f64> = query
        .iter()
        .map(|t| dotp(&w[..d], &emb(store, t)) + w[d] * store.idf_of(t))
        .collect();
    softmax(&z)
}

fn combine(params: &ParamSet, deep: f64, extra: &[f64]) -> f64 {
    let mut x = vec![deep];
    x.extend_from_slice(extra);
    affine(params, "combine", &x)[0]
}

pub fn drmm_oracle(
    params: &ParamSet,
    store: &EmbeddingStore,
    n_buckets: usize,
    query: &[String],
    doc: &[String],
    extra: &[f64],
) -> f64 {
    let g = gate(params, store, query);
    let mut deep = 0.0;
    for (i, q) in query.iter().enumerate() {
        let eq = emb(store, q);
        let mut counts = vec![0usize; n_buckets];
        for t in doc {
            let c = cos(&eq, &emb(store, t));
            let b = ((c + 1.0) / 2.0 * n_buckets as f64).floor();
            let b = if b < 0.0 {
                0
            } else {
                (b as usize).min(n_buckets - 1)
            };
            counts[b] += 1;
        }
        let h: Vec<f64> = counts.iter().map(|&c| (1.0 + c as f64).ln()).collect();
        deep += g[i] * mlp(params, "term_mlp", &h, leaky)[0];
    }
    combine(params, deep, extra)
}

/// `leaky(W [left; self; right] + b) + self` with zero neighbours at the ends.
fn context(params: &ParamSet, vecs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = vecs.first().map_or(0, |v| v.len());
    let zero = vec![0.0; d];
    (0..vecs.len())
        .map(|t| {
            let left = if t > 0 { &vecs[t - 1] } else { &zero };
            let right = if t + 1 < vecs.len() {
                &vecs[t + 1]
            } else {
                &zero
            };
            let x: Vec<f64> = left.iter().chain(&vecs[t]).chain(right).cloned().collect();
            let pre = affine(params, "context", &x);
            pre.iter()
                .zip(&vecs[t])
                .map(|(p, e)| leaky(*p) + e)
                .collect()
        })
        .collect()
}

fn abel_pass(
    params: &ParamSet,
    store: &EmbeddingStore,
    q_ctx: &[Vec<f64>],
    g: &[f64],
    doc: &[String],
    extra: &[f64],
) -> f64 {
    let dv: Vec<Vec<f64>> = doc.iter().map(|t| emb(store, t)).collect();
    let d_ctx = context(params, &dv);
    let live: Vec<usize> = (0..doc.len())
        .filter(|&j| store.row_index(&doc[j]).is_some())
        .collect();
    let mut deep = 0.0;
    for (i, cq) in q_ctx.iter().enumerate() {
        let a = softmax(
            &live
                .iter()
                .map(|&j| dotp(cq, &d_ctx[j]))
                .collect::<Vec<_>>(),
        );
        let mut att = vec![0.0; cq.len()];
        for (&j, w) in live.iter().zip(&a) {
            for c in 0..cq.len() {
                att[c] += w * d_ctx[j][c];
            }
        }
        let phi: Vec<f64> = att.iter().zip(cq).map(|(x, y)| x * y).collect();
        deep += g[i] * mlp(params, "term_mlp", &phi, leaky)[0];
    }
    combine(params, deep, extra)
}

/// ABEL-DRMM; with `density = Some(l_w)` the best window score is added.
pub fn abel_oracle(
    params: &ParamSet,
    store: &EmbeddingStore,
    query: &[String],
    doc: &[String],
    extra: &[f64],
    density: Option<usize>,
) -> f64 {
    let qv: Vec<Vec<f64>> = query.iter().map(|t| emb(store, t)).collect();
    let q_ctx = context(params, &qv);
    let g = gate(params, store, query);
    let base = abel_pass(params, store, &q_ctx, &g, doc, extra);
    let Some(l_w) = density else {
        return base;
    };
    let windows: Vec<&[String]> = if doc.len() <= l_w {
        vec![doc]
    } else {
        doc.windows(l_w).collect()
    };
    let best = windows
        .into_iter()
        .filter(|w| w.iter().any(|t| store.row_index(t).is_some()))
        .map(|w| abel_pass(params, store, &q_ctx, &g, w, extra))
        .fold(f64::NEG_INFINITY, f64::max);
    base + best
}

fn bcnn_stream(params: &ParamSet, n_blocks: usize, mut x: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut feats = Vec::new();
    for blk in 0..n_blocks {
        let (shape, k) = param(params, &format!("block{blk}.filters"));
        let (_, bias) = param(params, &format!("block{blk}.bias"));
        let (f, w, d) = (shape[0], shape[1], shape[2]);
        let t = x.len();
        // wide convolution: output p sees inputs p-w+1 ..= p
        let mut act = vec![vec![0.0; f]; t + w - 1];
        for p in 0..t + w - 1 {
            for fi in 0..f {
                let mut acc = bias[fi];
                for a in 0..w {
                    let r = p as isize - (w as isize - 1) + a as isize;
                    if r < 0 || r as usize >= t {
                        continue;
                    }
                    for c in 0..d {
                        acc += k[(fi * w + a) * d + c] * x[r as usize][c];
                    }
                }
                act[p][fi] = acc.tanh();
            }
        }
        let mut out = vec![vec![0.0; f]; t];
        for (i, o) in out.iter_mut().enumerate() {
            for fi in 0..f {
                let mut s = 0.0;
                for row in &act[i..i + w] {
                    s += row[fi];
                }
                o[fi] = s / w as f64;
            }
        }
        let mut mean = vec![0.0; f];
        for o in &out {
            for fi in 0..f {
                mean[fi] += o[fi] / t as f64;
            }
        }
        feats.push(mean);
        x = out;
    }
    feats
}

/// BCNN logit.
pub fn bcnn_oracle(
    params: &ParamSet,
    store: &EmbeddingStore,
    n_blocks: usize,
    max_snippet: usize,
    query: &[String],
    snippet: &[String],
    extra: &[f64],
) -> f64 {
    let qv = query.iter().map(|t| emb(store, t)).collect();
    let sv = snippet
        .iter()
        .take(max_snippet)
        .map(|t| emb(store, t))
        .collect();
    let fq = bcnn_stream(params, n_blocks, qv);
    let fs = bcnn_stream(params, n_blocks, sv);
    let mut x: Vec<f64> = fq.iter().zip(&fs).map(|(a, b)| cos(a, b)).collect();
    x.extend_from_slice(extra);
    affine(params, "logistic", &x)[0]
}

/// BM25 by scanning every document for every query term.
pub fn bm25_brute(
    docs: &[(String, Vec<String>)],
    stop: &HashSet<String>,
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avgdl = total as f64 / n;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !stop.contains(t) && !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        let mut any = false;
        for &term in &terms {
            let tf = toks.iter().filter(|t| *t == term).count();
            if tf == 0 {
                continue;
            }
            any = true;
            let df = docs.iter().filter(|(_, d)| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let tf = tf as f64;
            let norm = 1.0 - b + b * toks.len() as f64 / avgdl;
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
        }
        if any {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

/// Average precision with a fixed denominator of 10.
pub fn ap10(run: &[String], rel: &HashSet<String>) -> f64 {
    let mut sum = 0.0;
    for r in 0..run.len() {
        if rel.contains(&run[r]) {
            let hits = run[..=r].iter().filter(|d| rel.contains(*d)).count();
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / 10.0
}

pub fn f1(run: &[String], rel: &HashSet<String>) -> f64 {
    let got: HashSet<&String> = run.iter().collect();
    let inter = got.iter().filter(|d| rel.contains(**d)).count() as f64;
    if got.is_empty() || rel.is_empty() || inter == 0.0 {
        return 0.0;
    }
    let p = inter / got.len() as f64;
    let r = inter / rel.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn gmap(aps: &[f64], eps: f64) -> f64 {
    let logs: f64 = aps.iter().map(|a| (a + eps).ln()).sum();
    (logs / aps.len() as f64).exp()
}

/// Borda-style votes: rank r (0-based) within the top `depth` earns
/// `depth - r`.
pub fn votes(runs: &[Vec<String>], depth: usize) -> BTreeMap<String, usize> {
    let mut v = BTreeMap::new();
    for run in runs {
        for (r, d) in run.iter().take(depth).enumerate() {
            *v.entry(d.clone()).or_insert(0) += depth - r;
        }
    }
    v
}
