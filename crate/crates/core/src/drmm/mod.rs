//! DRMM and ABEL-DRMM: per query term relevance signals (similarity
//! histograms or attention-based encodings) scored by a shared MLP and
//! combined through a term gate.

mod abel;

pub use abel::{
    abel_qterm_backward, abel_qterm_encoding, confidence_filter, density_windows, AbelTermEncoding,
    ContextEncoder, ContextOutput, Projections,
};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddedTokens};
use crate::error::{arg_err, Result};
use crate::features::N_EXTRA_FEATURES;
use crate::model::Ranker;
use crate::nn::{
    dot, masked_softmax, softmax_backward, xavier_uniform, Activation, Dense, DenseCache, Mlp,
    MlpCache, ParamId, ParamSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrmmVariant {
    /// Bucketed cosine-similarity histograms.
    Histogram,
    /// Context encodings with attention over document terms.
    Abel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbelExtensionConfig {
    pub l_w: usize,
    pub t_d: usize,
    pub t_c: f64,
    pub density_enabled: bool,
    pub confidence_enabled: bool,
}

impl Default for AbelExtensionConfig {
    fn default() -> Self {
        AbelExtensionConfig {
            l_w: 20,
            t_d: 100,
            t_c: 0.01,
            density_enabled: false,
            confidence_enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrmmConfig {
    pub variant: DrmmVariant,
    /// Word-vector dimension; must match the embedding store.
    pub dim: usize,
    pub n_buckets: usize,
    pub mlp_hidden_dims: usize,
    pub mlp_layers: usize,
    pub activation: Activation,
    pub n_extra_features: usize,
    pub extension: AbelExtensionConfig,
}

impl Default for DrmmConfig {
    fn default() -> Self {
        DrmmConfig {
            variant: DrmmVariant::Histogram,
            dim: 200,
            n_buckets: 30,
            mlp_hidden_dims: 8,
            mlp_layers: 2,
            activation: Activation::LeakyRelu,
            n_extra_features: N_EXTRA_FEATURES,
            extension: AbelExtensionConfig::default(),
        }
    }
}

impl DrmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_buckets < 2 {
            return Err(arg_err("drmm: n_buckets must be >= 2"));
        }
        if self.dim < 1 || self.mlp_layers < 1 {
            return Err(arg_err("drmm: dim and mlp_layers must be >= 1"));
        }
        let ext = &self.extension;
        if ext.l_w < 1 || ext.t_d < 1 || !(ext.t_c > 0.0 && ext.t_c < 1.0) {
            return Err(arg_err("drmm: need l_w >= 1, t_d >= 1 and 0 < t_c < 1"));
        }
        if ext.density_enabled && self.variant != DrmmVariant::Abel {
            return Err(arg_err("drmm: density scoring requires the abel variant"));
        }
        Ok(())
    }

    fn term_input_dim(&self) -> usize {
        match self.variant {
            DrmmVariant::Histogram => self.n_buckets,
            DrmmVariant::Abel => self.dim,
        }
    }
}

/// `ln(1 + count)` per bucket of the cosines between `q` and every
/// document term. Bucket `i` covers `[-1 + 2i/B, -1 + 2(i+1)/B)`, the last
/// one closed at 1.
pub fn cosine_histogram(q: &[f64], doc: &EmbeddedTokens, n_buckets: usize) -> Result<Vec<f64>> {
    if doc.is_empty() {
        return Err(arg_err("histogram of an empty document"));
    }
    let mut counts = vec![0u32; n_buckets];
    for j in 0..doc.len() {
        let v = cosine(q, doc.vector(j))?;
        counts[bucket_of(v, n_buckets)] += 1;
    }
    Ok(counts.iter().map(|&c| (c as f64).ln_1p()).collect())
}

fn bucket_of(v: f64, n_buckets: usize) -> usize {
    let pos = ((v + 1.0) / 2.0 * n_buckets as f64).floor();
    (pos.max(0.0) as usize).min(n_buckets - 1)
}

/// `softmax_i(w_g . [e(q_i); idf(q_i)])`.
pub fn gate_weights(query: &EmbeddedTokens, idf: &[f64], w_g: &[f64]) -> Result<Vec<f64>> {
    let logits = gate_logits(query, idf, w_g)?;
    masked_softmax(&logits, &vec![true; logits.len()])
}

fn gate_logits(query: &EmbeddedTokens, idf: &[f64], w_g: &[f64]) -> Result<Vec<f64>> {
    let d = query.dim();
    if query.is_empty() || idf.len() != query.len() || w_g.len() != d + 1 {
        return Err(arg_err(format!(
            "gate: {} terms, {} idfs, gate vector of {} for dim {d}",
            query.len(),
            idf.len(),
            w_g.len()
        )));
    }
    Ok((0..query.len())
        .map(|i| dot(&w_g[..d], query.vector(i)) + w_g[d] * idf[i])
        .collect())
}

#[derive(Debug, Clone)]
pub struct DrmmInput {
    pub query: EmbeddedTokens,
    pub q_idf: Vec<f64>,
    pub doc: EmbeddedTokens,
    pub extra: Vec<f64>,
}

/// Everything computed while scoring one document range.
#[derive(Debug, Clone)]
pub struct PassCache {
    mlp: Vec<MlpCache>,
    term_scores: Vec<f64>,
    combine: DenseCache,
    /// Abel only: document context encodings and per-term attention.
    doc_ctx: Option<ContextOutput>,
    attention: Vec<AbelTermEncoding>,
}

#[derive(Debug, Clone)]
pub struct DrmmCache {
    gate: Vec<f64>,
    query_ctx: Option<ContextOutput>,
    base: PassCache,
    /// Density only: the best-scoring window and its pass.
    window: Option<(Range<usize>, PassCache)>,
    pub base_score: f64,
    pub window_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Drmm {
    cfg: DrmmConfig,
    params: ParamSet,
    context: Option<ContextEncoder>,
    gate: ParamId,
    term_mlp: Mlp,
    combine: Dense,
}

impl Drmm {
    pub fn new<R: Rng>(cfg: DrmmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let context = (cfg.variant == DrmmVariant::Abel)
            .then(|| ContextEncoder::new(&mut params, cfg.dim, rng));
        let gate = params.insert(
            "gate.weight",
            xavier_uniform(&[cfg.dim + 1], cfg.dim + 1, 1, rng),
        );
        let term_mlp = Mlp::new(
            &mut params,
            "term_mlp",
            cfg.term_input_dim(),
            cfg.mlp_hidden_dims,
            1,
            cfg.mlp_layers,
            cfg.activation,
            rng,
        );
        let combine = Dense::new(
            &mut params,
            "combine",
            1 + cfg.n_extra_features,
            1,
            Activation::Linear,
            rng,
        );
        Ok(Drmm {
            cfg,
            params,
            context,
            gate,
            term_mlp,
            combine,
        })
    }

    pub fn config(&self) -> &DrmmConfig {
        &self.cfg
    }

    /// Window and confidence settings do not affect the parameter layout
    /// and may be changed on a trained model.
    pub fn extension_mut(&mut self) -> &mut AbelExtensionConfig {
        &mut self.cfg.extension
    }

    fn check(&self, input: &DrmmInput) -> Result<()> {
        if input.query.is_empty() || input.doc.is_empty() {
            return Err(arg_err("drmm needs a non-empty query and document"));
        }
        if input.query.dim() != self.cfg.dim {
            return Err(arg_err(format!(
                "embedding dim {} does not match model dim {}",
                input.query.dim(),
                self.cfg.dim
            )));
        }
        if input.extra.len() != self.cfg.n_extra_features {
            return Err(arg_err(format!(
                "drmm expects {} extra features, got {}",
                self.cfg.n_extra_features,
                input.extra.len()
            )));
        }
        Ok(())
    }

    fn head(
        &self,
        term_inputs: &[Vec<f64>],
        gate: &[f64],
        extra: &[f64],
    ) -> Result<(f64, PassCache)> {
        let mut mlp = Vec::with_capacity(term_inputs.len());
        let mut term_scores = Vec::with_capacity(term_inputs.len());
        for x in term_inputs {
            let (out, c) = self.term_mlp.forward(&self.params, x)?;
            term_scores.push(out[0]);
            mlp.push(c);
        }
        let deep: f64 = gate.iter().zip(&term_scores).map(|(g, r)| g * r).sum();
        let mut x = Vec::with_capacity(1 + extra.len());
        x.push(deep);
        x.extend_from_slice(extra);
        let (out, combine) = self.combine.forward(&self.params, &x)?;
        Ok((
            out[0],
            PassCache {
                mlp,
                term_scores,
                combine,
                doc_ctx: None,
                attention: Vec::new(),
            },
        ))
    }

    /// Backward through the head; returns `(d term inputs, d gate)`.
    fn head_backward(
        &mut self,
        pass: &PassCache,
        gate: &[f64],
        dscore: f64,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let dx = self
            .combine
            .backward(&mut self.params, &pass.combine, &[dscore]);
        let ddeep = dx[0];
        let dgate: Vec<f64> = pass.term_scores.iter().map(|r| ddeep * r).collect();
        let dterm = pass
            .mlp
            .iter()
            .zip(gate)
            .map(|(c, g)| self.term_mlp.backward(&mut self.params, c, &[ddeep * g]))
            .collect();
        (dterm, dgate)
    }

    fn histogram_pass(&self, input: &DrmmInput, gate: &[f64]) -> Result<(f64, PassCache)> {
        let terms = (0..input.query.len())
            .map(|i| cosine_histogram(input.query.vector(i), &input.doc, self.cfg.n_buckets))
            .collect::<Result<Vec<_>>>()?;
        self.head(&terms, gate, &input.extra)
    }

    fn abel_pass(
        &self,
        input: &DrmmInput,
        gate: &[f64],
        query_ctx: &ContextOutput,
        doc_proj: &Projections,
        range: Range<usize>,
    ) -> Result<(f64, PassCache)> {
        let enc = self.context.as_ref().expect("abel variant");
        let doc_ctx = enc.encode_range(&self.params, &input.doc, doc_proj, range.clone());
        let rows: Vec<&[f64]> = (0..range.len()).map(|i| doc_ctx.row(i)).collect();
        let mask: Vec<bool> = range.clone().map(|t| !input.doc.is_oov(t)).collect();
        let attention = (0..input.query.len())
            .map(|i| abel_qterm_encoding(query_ctx.row(i), &rows, &mask))
            .collect::<Result<Vec<_>>>()?;
        let terms: Vec<Vec<f64>> = attention.iter().map(|a| a.phi.clone()).collect();
        let (score, mut pass) = self.head(&terms, gate, &input.extra)?;
        pass.doc_ctx = Some(doc_ctx);
        pass.attention = attention;
        Ok((score, pass))
    }

    /// Backward through one abel pass; accumulates into the query-encoding
    /// gradient and the document projection gradient.
    fn abel_pass_backward(
        &mut self,
        pass: &PassCache,
        query_ctx: &ContextOutput,
        dterm: &[Vec<f64>],
        dq_ctx: &mut [f64],
        ddoc_proj: &mut [f64],
    ) {
        let d = self.cfg.dim;
        let doc_ctx = pass.doc_ctx.as_ref().expect("abel pass");
        let n = doc_ctx.range.len();
        let rows: Vec<&[f64]> = (0..n).map(|i| doc_ctx.row(i)).collect();
        let mut ddoc = vec![vec![0.0; d]; n];
        for (i, (att, dphi)) in pass.attention.iter().zip(dterm).enumerate() {
            abel_qterm_backward(
                query_ctx.row(i),
                &rows,
                att,
                dphi,
                &mut dq_ctx[i * d..(i + 1) * d],
                &mut ddoc,
            );
        }
        let flat: Vec<f64> = ddoc.concat();
        let enc = self.context.clone().expect("abel variant");
        enc.backward_range(&mut self.params, doc_ctx, &flat, ddoc_proj);
    }

    fn gate_backward(&mut self, input: &DrmmInput, gate: &[f64], dgate: &[f64]) {
        let dz = softmax_backward(gate, dgate);
        let d = self.cfg.dim;
        let gw = self.params.grad_mut(self.gate);
        for (i, &g) in dz.iter().enumerate() {
            for (w, e) in gw[..d].iter_mut().zip(input.query.vector(i)) {
                *w += g * e;
            }
            gw[d] += g * input.q_idf[i];
        }
    }
}

impl Ranker for Drmm {
    type Input = DrmmInput;
    type Cache = DrmmCache;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, input: &DrmmInput) -> Result<(f64, DrmmCache)> {
        self.check(input)?;
        let gate = gate_weights(
            &input.query,
            &input.q_idf,
            self.params.value(self.gate).data(),
        )?;
        let Some(enc) = &self.context else {
            let (score, base) = self.histogram_pass(input, &gate)?;
            return Ok((
                score,
                DrmmCache {
                    gate,
                    query_ctx: None,
                    base,
                    window: None,
                    base_score: score,
                    window_scores: Vec::new(),
                },
            ));
        };
        let query_ctx = enc.encode(&self.params, &input.query);
        let proj = enc.project(&self.params, &input.doc);
        let (base_score, base) =
            self.abel_pass(input, &gate, &query_ctx, &proj, 0..input.doc.len())?;
        let mut cache = DrmmCache {
            gate,
            query_ctx: None,
            base,
            window: None,
            base_score,
            window_scores: Vec::new(),
        };
        let mut score = base_score;
        if self.cfg.extension.density_enabled {
            let mut best: Option<(f64, Range<usize>, PassCache)> = None;
            for range in density_windows(input.doc.len(), self.cfg.extension.l_w) {
                if range.clone().all(|t| input.doc.is_oov(t)) {
                    continue;
                }
                let (s, pass) =
                    self.abel_pass(input, &cache.gate, &query_ctx, &proj, range.clone())?;
                cache.window_scores.push(s);
                if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
                    best = Some((s, range, pass));
                }
            }
            if let Some((s, range, pass)) = best {
                score += s;
                cache.window = Some((range, pass));
            }
        }
        cache.query_ctx = Some(query_ctx);
        Ok((score, cache))
    }

    fn backward(&mut self, input: &DrmmInput, cache: &DrmmCache, dscore: f64) {
        let (dterm, mut dgate) = self.head_backward(&cache.base, &cache.gate, dscore);
        let Some(query_ctx) = &cache.query_ctx else {
            self.gate_backward(input, &cache.gate, &dgate);
            return;
        };
        let d = self.cfg.dim;
        let mut dq_ctx = vec![0.0; input.query.len() * d];
        let mut ddoc_proj = vec![0.0; input.doc.len() * 3 * d];
        self.abel_pass_backward(&cache.base, query_ctx, &dterm, &mut dq_ctx, &mut ddoc_proj);
        if let Some((_, pass)) = &cache.window {
            let (dterm_w, dgate_w) = self.head_backward(pass, &cache.gate, dscore);
            for (a, b) in dgate.iter_mut().zip(&dgate_w) {
                *a += b;
            }
            self.abel_pass_backward(pass, query_ctx, &dterm_w, &mut dq_ctx, &mut ddoc_proj);
        }
        self.gate_backward(input, &cache.gate, &dgate);
        let enc = self.context.clone().expect("abel variant");
        let mut dq_proj = vec![0.0; input.query.len() * 3 * d];
        enc.backward_range(&mut self.params, query_ctx, &dq_ctx, &mut dq_proj);
        enc.backward_project(&mut self.params, &input.query, &dq_proj);
        enc.backward_project(&mut self.params, &input.doc, &ddoc_proj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingStore;
    use crate::nn::finite_diff_gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn store(dim: usize) -> Arc<EmbeddingStore> {
        let mut s = EmbeddingStore::new(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for t in ["a", "b", "c", "d", "e", "f", "g"] {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(t, &v).unwrap();
        }
        Arc::new(s)
    }

    fn input(s: &Arc<EmbeddingStore>, q: &str, d: &str) -> DrmmInput {
        let q: Vec<String> = q.split_whitespace().map(String::from).collect();
        let d: Vec<String> = d.split_whitespace().map(String::from).collect();
        DrmmInput {
            q_idf: (0..q.len()).map(|i| 1.0 + i as f64 * 0.7).collect(),
            query: EmbeddedTokens::new(s, &q),
            doc: EmbeddedTokens::new(s, &d),
            extra: vec![0.4, 0.1, -0.3, 0.2],
        }
    }

    fn cfg(variant: DrmmVariant, density: bool) -> DrmmConfig {
        DrmmConfig {
            variant,
            dim: 3,
            n_buckets: 5,
            mlp_hidden_dims: 4,
            extension: AbelExtensionConfig {
                l_w: 3,
                density_enabled: density,
                ..AbelExtensionConfig::default()
            },
            ..DrmmConfig::default()
        }
    }

    #[test]
    fn histogram_examples() {
        let s = store(3);
        let one = EmbeddedTokens::new(&s, &["a".to_string()]);
        let h = cosine_histogram(s.lookup("a").0, &one, 30).unwrap();
        assert!((h[29] - 2f64.ln()).abs() < 1e-15);
        assert!(h[..29].iter().all(|&v| v == 0.0));
        // OOV document terms have cosine 0, which lands in the middle bucket.
        let oov = EmbeddedTokens::new(&s, &vec!["zz".to_string(); 4]);
        let h = cosine_histogram(s.lookup("a").0, &oov, 30).unwrap();
        assert!((h[15] - 5f64.ln()).abs() < 1e-15);
        assert_eq!(bucket_of(-1.0, 30), 0);
        assert_eq!(bucket_of(1.0, 30), 29);
    }

    #[test]
    fn gate_examples() {
        let s = store(3);
        let q = EmbeddedTokens::new(&s, &["a".into(), "b".into()]);
        assert_eq!(
            gate_weights(&q, &[1.0, 2.0], &[0.0; 4]).unwrap(),
            vec![0.5, 0.5]
        );
        let g = gate_weights(&q, &[1.0, 2.0], &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let e = 1.0f64.exp() / (1.0f64.exp() + 2.0f64.exp());
        assert!((g[0] - e).abs() < 1e-15);
        let single = EmbeddedTokens::new(&s, &["c".into()]);
        assert_eq!(
            gate_weights(&single, &[3.0], &[0.3, 0.1, -2.0, 0.5]).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn zero_heads_give_bias() {
        let s = store(3);
        for variant in [DrmmVariant::Histogram, DrmmVariant::Abel] {
            let mut m = Drmm::new(cfg(variant, false), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let ids: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
            for name in ids
                .iter()
                .filter(|n| n.starts_with("term_mlp") || n.starts_with("combine"))
            {
                let id = m.params().id_of(name).unwrap();
                m.params_mut().value_mut(id).fill(0.0);
            }
            let b = m.params().id_of("combine.bias").unwrap();
            m.params_mut().value_mut(b).data_mut()[0] = 0.75;
            assert_eq!(m.score(&input(&s, "a b", "c d e")).unwrap(), 0.75);
        }
    }

    #[test]
    fn short_document_density_doubles_base() {
        let s = store(3);
        let m = Drmm::new(
            cfg(DrmmVariant::Abel, true),
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        let inp = input(&s, "a b", "c d e");
        let (score, cache) = m.forward(&inp).unwrap();
        assert!((score - 2.0 * cache.base_score).abs() < 1e-9);
        let long = input(&s, "a b", "c d e f g a b");
        let (score, cache) = m.forward(&long).unwrap();
        assert_eq!(cache.window_scores.len(), 5);
        let min = cache
            .window_scores
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(score >= cache.base_score + min);
    }

    #[test]
    fn gradchecks() {
        let s = store(3);
        let cases = [
            (DrmmVariant::Histogram, false),
            (DrmmVariant::Abel, false),
            (DrmmVariant::Abel, true),
        ];
        for (variant, density) in cases {
            let mut m =
                Drmm::new(cfg(variant, density), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let inp = input(&s, "a b zz", "c a zz d e");
            let base = m.clone();
            let mut params = m.params().clone();
            let report = finite_diff_gradcheck(
                &mut params,
                |p| {
                    let mut mm = base.clone();
                    mm.params = p.clone();
                    mm.score(&inp)
                },
                |p| {
                    m.params = p.clone();
                    let (_, c) = m.forward(&inp)?;
                    m.backward(&inp, &c, 1.0);
                    *p = m.params.clone();
                    Ok(())
                },
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_relative_error <= 1e-5,
                "{variant:?}/{density}: {report:?}"
            );
        }
    }
}
