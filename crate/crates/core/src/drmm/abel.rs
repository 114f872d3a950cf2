//! Context-sensitive term encodings, attention-based document-aware query
//! term encodings, and the confidence filter applied to ABEL-DRMM runs.

use std::ops::Range;

use rand::Rng;

use crate::embed::EmbeddedTokens;
use crate::error::{arg_err, Result};
use crate::index::ScoredDoc;
use crate::nn::{
    dot, masked_softmax, softmax_backward, xavier_uniform, Activation, ParamId, ParamSet, Tensor,
};

const PHI: Activation = Activation::LeakyRelu;

/// `c(t) = leaky_relu(W_c [e(t-1); e(t); e(t+1)] + b_c) + e(t)`, with zero
/// vectors beyond the ends of the encoded range.
///
/// `W_c` is stored as `[D, 3D]`; its three `D x D` column blocks act on the
/// left neighbour, the token itself and the right neighbour. Projecting every
/// token once through all three blocks lets any sub-range be encoded
/// without touching the weights again.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

/// Per-token projections `[W_L e(t) | W_M e(t) | W_R e(t)]`, `T x 3D`.
#[derive(Debug, Clone)]
pub struct Projections {
    dim: usize,
    data: Vec<f64>,
}

impl Projections {
    fn block(&self, t: usize, which: usize) -> &[f64] {
        let d = self.dim;
        &self.data[t * 3 * d + which * d..t * 3 * d + (which + 1) * d]
    }
}

/// Encodings of one contiguous range: pre-activations and outputs, both
/// `len x D` row-major.
#[derive(Debug, Clone)]
pub struct ContextOutput {
    pub range: Range<usize>,
    pre: Vec<f64>,
    pub c: Vec<f64>,
}

impl ContextOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.c.len() / self.range.len();
        &self.c[i * d..(i + 1) * d]
    }
}

impl ContextEncoder {
    pub fn new<R: Rng>(params: &mut ParamSet, dim: usize, rng: &mut R) -> Self {
        let weight = params.insert(
            "context.weight",
            xavier_uniform(&[dim, 3 * dim], 3 * dim, dim, rng),
        );
        let bias = params.insert("context.bias", Tensor::zeros(&[dim]));
        ContextEncoder { weight, bias, dim }
    }

    pub fn project(&self, params: &ParamSet, seq: &EmbeddedTokens) -> Projections {
        let d = self.dim;
        let w = params.value(self.weight).data();
        let mut data = vec![0.0; seq.len() * 3 * d];
        for t in 0..seq.len() {
            if seq.is_oov(t) {
                continue;
            }
            let e = seq.vector(t);
            let out = &mut data[t * 3 * d..(t + 1) * 3 * d];
            for r in 0..d {
                let wrow = &w[r * 3 * d..(r + 1) * 3 * d];
                for blk in 0..3 {
                    out[blk * d + r] = dot(&wrow[blk * d..(blk + 1) * d], e);
                }
            }
        }
        Projections { dim: d, data }
    }

    pub fn encode_range(
        &self,
        params: &ParamSet,
        seq: &EmbeddedTokens,
        proj: &Projections,
        range: Range<usize>,
    ) -> ContextOutput {
        let d = self.dim;
        let b = params.value(self.bias).data();
        let mut pre = Vec::with_capacity(range.len() * d);
        let mut c = Vec::with_capacity(range.len() * d);
        for t in range.clone() {
            let mid = proj.block(t, 1);
            let left = (t > range.start).then(|| proj.block(t - 1, 0));
            let right = (t + 1 < range.end).then(|| proj.block(t + 1, 2));
            let e = seq.vector(t);
            for r in 0..d {
                let mut p = b[r] + mid[r];
                if let Some(l) = left {
                    p += l[r];
                }
                if let Some(rt) = right {
                    p += rt[r];
                }
                pre.push(p);
                c.push(PHI.apply(p) + e[r]);
            }
        }
        ContextOutput { range, pre, c }
    }

    /// Routes `dc` (`len x D`) back to the bias and into `dproj`.
    pub fn backward_range(
        &self,
        params: &mut ParamSet,
        out: &ContextOutput,
        dc: &[f64],
        dproj: &mut [f64],
    ) {
        let d = self.dim;
        let range = out.range.clone();
        let db = params.grad_mut(self.bias);
        for (i, t) in range.clone().enumerate() {
            for r in 0..d {
                let g = dc[i * d + r] * PHI.derivative(out.pre[i * d + r]);
                if g == 0.0 {
                    continue;
                }
                db[r] += g;
                dproj[t * 3 * d + d + r] += g;
                if t > range.start {
                    dproj[(t - 1) * 3 * d + r] += g;
                }
                if t + 1 < range.end {
                    dproj[(t + 1) * 3 * d + 2 * d + r] += g;
                }
            }
        }
    }

    /// Accumulates `dW_c` from gradients of the projections.
    pub fn backward_project(&self, params: &mut ParamSet, seq: &EmbeddedTokens, dproj: &[f64]) {
        let d = self.dim;
        let gw = params.grad_mut(self.weight);
        for t in 0..seq.len() {
            if seq.is_oov(t) {
                continue;
            }
            let e = seq.vector(t);
            for blk in 0..3 {
                for r in 0..d {
                    let g = dproj[t * 3 * d + blk * d + r];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut gw[r * 3 * d + blk * d..r * 3 * d + (blk + 1) * d];
                    for (gi, ei) in row.iter_mut().zip(e) {
                        *gi += g * ei;
                    }
                }
            }
        }
    }

    /// Encodes the whole sequence.
    pub fn encode(&self, params: &ParamSet, seq: &EmbeddedTokens) -> ContextOutput {
        let proj = self.project(params, seq);
        self.encode_range(params, seq, &proj, 0..seq.len())
    }
}

/// Attention of one query-term encoding over document-term encodings and
/// the resulting Hadamard encoding.
#[derive(Debug, Clone)]
pub struct AbelTermEncoding {
    pub attention: Vec<f64>,
    /// `sum_j a_j c(d_j)`.
    pub attended: Vec<f64>,
    /// `attended ⊙ c(q)`.
    pub phi: Vec<f64>,
}

/// `doc_c` holds one encoding per entry of `mask`; masked (OOV or padding)
/// terms are excluded from the softmax.
pub fn abel_qterm_encoding(
    cq: &[f64],
    doc_c: &[&[f64]],
    mask: &[bool],
) -> Result<AbelTermEncoding> {
    if !mask.iter().any(|&m| m) {
        return Err(arg_err(
            "attention needs at least one unmasked document term",
        ));
    }
    let scores: Vec<f64> = doc_c.iter().map(|cd| dot(cq, cd)).collect();
    let attention = masked_softmax(&scores, mask)?;
    let mut attended = vec![0.0; cq.len()];
    for (a, cd) in attention.iter().zip(doc_c) {
        if *a != 0.0 {
            for (x, v) in attended.iter_mut().zip(cd.iter()) {
                *x += a * v;
            }
        }
    }
    let phi = attended.iter().zip(cq).map(|(a, b)| a * b).collect();
    Ok(AbelTermEncoding {
        attention,
        attended,
        phi,
    })
}

/// Gradients of [`abel_qterm_encoding`] given `dphi`: adds into `dcq` and
/// into each row of `ddoc`.
pub fn abel_qterm_backward(
    cq: &[f64],
    doc_c: &[&[f64]],
    enc: &AbelTermEncoding,
    dphi: &[f64],
    dcq: &mut [f64],
    ddoc: &mut [Vec<f64>],
) {
    let dattended: Vec<f64> = dphi.iter().zip(cq).map(|(g, q)| g * q).collect();
    for (x, (g, a)) in dcq.iter_mut().zip(dphi.iter().zip(&enc.attended)) {
        *x += g * a;
    }
    let datt: Vec<f64> = doc_c.iter().map(|cd| dot(&dattended, cd)).collect();
    let dscores = softmax_backward(&enc.attention, &datt);
    for (j, cd) in doc_c.iter().enumerate() {
        let a = enc.attention[j];
        let ds = dscores[j];
        if a == 0.0 && ds == 0.0 {
            continue;
        }
        for r in 0..cq.len() {
            ddoc[j][r] += a * dattended[r] + ds * cq[r];
            dcq[r] += ds * cd[r];
        }
    }
}

/// Windows of `l_w` consecutive tokens, stride 1; a single window covering
/// everything when the sequence is no longer than `l_w`.
pub fn density_windows(len: usize, l_w: usize) -> Vec<Range<usize>> {
    if len <= l_w {
        vec![0..len]
    } else {
        (0..=len - l_w).map(|s| s..s + l_w).collect()
    }
}

/// Softmax over the top `min(t_d, len)` scores of a descending list; keeps
/// the entries whose normalized score is strictly above `t_c`.
pub fn confidence_filter(scored: &[ScoredDoc], t_d: usize, t_c: f64) -> Vec<ScoredDoc> {
    let top = &scored[..scored.len().min(t_d)];
    if top.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = top.iter().map(|d| d.score).collect();
    let probs = masked_softmax(&logits, &vec![true; top.len()]).expect("non-empty");
    let kept: Vec<ScoredDoc> = top
        .iter()
        .zip(&probs)
        .filter(|(_, &p)| p > t_c)
        .map(|(d, _)| d.clone())
        .collect();
    if kept.is_empty() {
        log::warn!(
            "confidence filter removed all {} candidates (threshold {t_c})",
            top.len()
        );
    }
    kept
}
