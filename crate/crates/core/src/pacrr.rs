//! PACRR and TERM-PACRR: n-gram convolutions over a query/document
//! similarity matrix, k-max pooling per query term, and two scoring heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingStore};
use crate::error::{arg_err, Result};
use crate::features::N_EXTRA_FEATURES;
use crate::model::Ranker;
use crate::nn::{
    conv2d_valid, conv2d_valid_backward, kmax_pool, kmax_pool_backward, masked_softmax,
    max_over_filters, max_over_filters_backward, xavier_uniform, Activation, Dense, DenseCache,
    KmaxSlot, Mlp, MlpCache, ParamId, ParamSet, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacrrHead {
    /// Rows concatenated and scored by one MLP.
    ConcatMlp,
    /// One shared MLP per row, combined by a linear layer.
    PerTermMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacrrConfig {
    pub l_q: usize,
    pub l_d: usize,
    pub l_g: usize,
    pub filters_per_size: usize,
    pub k: usize,
    pub mlp_hidden_dims: usize,
    pub mlp_layers: usize,
    pub activation: Activation,
    pub head: PacrrHead,
    pub n_extra_features: usize,
}

impl Default for PacrrConfig {
    fn default() -> Self {
        PacrrConfig {
            l_q: 30,
            l_d: 300,
            l_g: 3,
            filters_per_size: 16,
            k: 2,
            mlp_hidden_dims: 7,
            mlp_layers: 2,
            activation: Activation::Relu,
            head: PacrrHead::PerTermMlp,
            n_extra_features: N_EXTRA_FEATURES,
        }
    }
}

impl PacrrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_g < 2 {
            return Err(arg_err("pacrr: l_g must be >= 2"));
        }
        if self.k < 1 {
            return Err(arg_err("pacrr: k must be >= 1"));
        }
        if self.l_q < 1 || self.l_d < 1 {
            return Err(arg_err("pacrr: l_q and l_d must be >= 1"));
        }
        if self.filters_per_size < 1 || self.mlp_layers < 1 {
            return Err(arg_err("pacrr: need at least one filter and one MLP layer"));
        }
        Ok(())
    }

    /// Width of one encoding row: a k-max block per n-gram size plus the
    /// normalized idf.
    pub fn row_width(&self) -> usize {
        self.l_g * self.k + 1
    }
}

/// Query/document cosine similarities. Only the real (untruncated,
/// unpadded) cells are stored; every other cell of the `l_q x l_d` grid is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub l_q: usize,
    pub l_d: usize,
    q_len: usize,
    d_len: usize,
    values: Vec<f64>,
    pub q_mask: Vec<bool>,
    pub d_mask: Vec<bool>,
}

impl SimMatrix {
    pub fn build(
        query: &[String],
        doc: &[String],
        store: &EmbeddingStore,
        l_q: usize,
        l_d: usize,
    ) -> Result<Self> {
        if query.is_empty() {
            return Err(arg_err("similarity matrix needs a non-empty query"));
        }
        let q = &query[..query.len().min(l_q)];
        let d = &doc[..doc.len().min(l_d)];
        let qv: Vec<(&[f64], bool)> = q.iter().map(|t| store.lookup(t)).collect();
        let dv: Vec<(&[f64], bool)> = d.iter().map(|t| store.lookup(t)).collect();
        let mut values = Vec::with_capacity(q.len() * d.len());
        for &(u, q_oov) in &qv {
            for &(v, d_oov) in &dv {
                values.push(if q_oov || d_oov { 0.0 } else { cosine(u, v)? });
            }
        }
        let mut q_mask = vec![false; l_q];
        for (i, &(_, oov)) in qv.iter().enumerate() {
            q_mask[i] = !oov;
        }
        let mut d_mask = vec![false; l_d];
        for (j, &(_, oov)) in dv.iter().enumerate() {
            d_mask[j] = !oov;
        }
        Ok(SimMatrix {
            l_q,
            l_d,
            q_len: q.len(),
            d_len: d.len(),
            values,
            q_mask,
            d_mask,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.q_len && j < self.d_len {
            self.values[i * self.d_len + j]
        } else {
            0.0
        }
    }

    /// Number of query rows that came from real tokens.
    pub fn query_len(&self) -> usize {
        self.q_len
    }

    pub fn doc_len(&self) -> usize {
        self.d_len
    }

    /// The real region with `pad` extra zero rows and columns on the
    /// bottom/right.
    fn padded(&self, pad: usize) -> Tensor {
        let (rows, cols) = (self.q_len + pad, self.d_len + pad);
        let mut t = Tensor::zeros(&[rows, cols]);
        let data = t.data_mut();
        for i in 0..self.q_len {
            data[i * cols..i * cols + self.d_len]
                .copy_from_slice(&self.values[i * self.d_len..(i + 1) * self.d_len]);
        }
        t
    }
}

/// One encoding row per query position; masked rows are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DocAwareQTermMatrix {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PacrrInput {
    pub sim: SimMatrix,
    /// Idf of each real query token, in query order.
    pub idf: Vec<f64>,
    pub extra: Vec<f64>,
}

impl PacrrInput {
    pub fn build(
        query: &[String],
        doc: &[String],
        store: &EmbeddingStore,
        cfg: &PacrrConfig,
        extra: Vec<f64>,
    ) -> Result<Self> {
        let sim = SimMatrix::build(query, doc, store, cfg.l_q, cfg.l_d)?;
        let idf = query[..sim.query_len()]
            .iter()
            .map(|t| store.idf_of(t))
            .collect();
        Ok(PacrrInput { sim, idf, extra })
    }
}

#[derive(Debug, Clone)]
struct SizeCache {
    argmax: Vec<usize>,
    /// Per real query row: k-max sources within the conv output row.
    slots: Vec<Vec<KmaxSlot>>,
}

#[derive(Debug, Clone)]
pub struct EncodingCache {
    sizes: Vec<SizeCache>,
}

#[derive(Debug, Clone)]
enum Head {
    PerTerm { mlp: Mlp, combine: Dense },
    Concat { mlp: Mlp },
}

#[derive(Debug, Clone)]
pub enum HeadCache {
    PerTerm {
        rows: Vec<Option<MlpCache>>,
        combine: DenseCache,
    },
    Concat {
        mlp: MlpCache,
    },
}

#[derive(Debug, Clone)]
pub struct PacrrCache {
    pub encodings: DocAwareQTermMatrix,
    encoding: EncodingCache,
    head: HeadCache,
}

#[derive(Debug, Clone)]
pub struct Pacrr {
    cfg: PacrrConfig,
    params: ParamSet,
    /// Filters for n = 2..=l_g, each `[F, n, n]`.
    filters: Vec<ParamId>,
    head: Head,
}

impl Pacrr {
    pub fn new<R: Rng>(cfg: PacrrConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let f = cfg.filters_per_size;
        let filters = (2..=cfg.l_g)
            .map(|n| {
                params.insert(
                    format!("conv{n}.filters"),
                    xavier_uniform(&[f, n, n], n * n, f * n * n, rng),
                )
            })
            .collect();
        let w = cfg.row_width();
        let head = match cfg.head {
            PacrrHead::PerTermMlp => Head::PerTerm {
                mlp: Mlp::new(
                    &mut params,
                    "term_mlp",
                    w,
                    cfg.mlp_hidden_dims,
                    1,
                    cfg.mlp_layers,
                    cfg.activation,
                    rng,
                ),
                combine: Dense::new(
                    &mut params,
                    "combine",
                    cfg.l_q + cfg.n_extra_features,
                    1,
                    Activation::Linear,
                    rng,
                ),
            },
            PacrrHead::ConcatMlp => Head::Concat {
                mlp: Mlp::new(
                    &mut params,
                    "mlp",
                    cfg.l_q * w + cfg.n_extra_features,
                    cfg.mlp_hidden_dims,
                    1,
                    cfg.mlp_layers,
                    cfg.activation,
                    rng,
                ),
            },
        };
        Ok(Pacrr {
            cfg,
            params,
            filters,
            head,
        })
    }

    pub fn config(&self) -> &PacrrConfig {
        &self.cfg
    }

    /// Trainable scalar count implied by the config alone.
    pub fn expected_param_count(cfg: &PacrrConfig) -> usize {
        let convs: usize = (2..=cfg.l_g).map(|n| cfg.filters_per_size * n * n).sum();
        let mlp = |input: usize| {
            let h = cfg.mlp_hidden_dims;
            if cfg.mlp_layers == 1 {
                input + 1
            } else {
                (input * h + h) + (cfg.mlp_layers - 2) * (h * h + h) + (h + 1)
            }
        };
        let w = cfg.row_width();
        convs
            + match cfg.head {
                PacrrHead::PerTermMlp => mlp(w) + cfg.l_q + cfg.n_extra_features + 1,
                PacrrHead::ConcatMlp => mlp(cfg.l_q * w + cfg.n_extra_features),
            }
    }

    pub fn encode(&self, input: &PacrrInput) -> Result<(DocAwareQTermMatrix, EncodingCache)> {
        let cfg = &self.cfg;
        let sim = &input.sim;
        let k = cfg.k;
        let width = cfg.row_width();
        let q_len = sim.query_len();
        let d_len = sim.doc_len();
        // Truncation leaves l_d - d_len zero columns; at most k of them can
        // ever be selected.
        let pad = (cfg.l_d - d_len).min(k);
        let mut rows = vec![vec![0.0; width]; cfg.l_q];
        let mask = sim.q_mask.clone();

        let mut scratch = vec![0.0; d_len + pad];
        for i in 0..q_len {
            if !mask[i] {
                continue;
            }
            scratch[..d_len].copy_from_slice(&sim.values[i * d_len..(i + 1) * d_len]);
            let (vals, _) = kmax_pool(&scratch, k)?;
            rows[i][..k].copy_from_slice(&vals);
        }

        let mut sizes = Vec::with_capacity(self.filters.len());
        for (bi, (&fid, n)) in self.filters.iter().zip(2..).enumerate() {
            let padded = sim.padded(n - 1);
            let maps = conv2d_valid(&padded, self.params.value(fid))?;
            let (pooled, argmax) = max_over_filters(&maps)?;
            let mut slots = vec![Vec::new(); q_len];
            for i in 0..q_len {
                if !mask[i] {
                    continue;
                }
                scratch[..d_len].copy_from_slice(pooled.row(i));
                scratch[d_len..].iter_mut().for_each(|v| *v = 0.0);
                let (vals, s) = kmax_pool(&scratch, k)?;
                let off = (bi + 1) * k;
                rows[i][off..off + k].copy_from_slice(&vals);
                slots[i] = s;
            }
            sizes.push(SizeCache { argmax, slots });
        }

        let any_real = mask.iter().any(|&m| m);
        let idf_softmax = if any_real {
            let mut logits = input.idf.clone();
            logits.resize(cfg.l_q, 0.0);
            masked_softmax(&logits, &mask)?
        } else {
            vec![0.0; cfg.l_q]
        };
        for (row, &p) in rows.iter_mut().zip(&idf_softmax) {
            row[width - 1] = p;
        }
        Ok((
            DocAwareQTermMatrix { width, rows, mask },
            EncodingCache { sizes },
        ))
    }

    fn encode_backward(&mut self, input: &PacrrInput, cache: &EncodingCache, drows: &[Vec<f64>]) {
        let sim = &input.sim;
        let k = self.cfg.k;
        let q_len = sim.query_len();
        let d_len = sim.doc_len();
        let f = self.cfg.filters_per_size;
        for (bi, (size, n)) in cache.sizes.iter().zip(2..).enumerate() {
            let off = (bi + 1) * k;
            let mut dpooled = Tensor::zeros(&[q_len, d_len]);
            let mut any = false;
            for i in 0..q_len {
                if size.slots[i].is_empty() {
                    continue;
                }
                let d = kmax_pool_backward(&size.slots[i], d_len + k, &drows[i][off..off + k]);
                dpooled.row_mut(i).copy_from_slice(&d[..d_len]);
                any |= d[..d_len].iter().any(|&g| g != 0.0);
            }
            if !any {
                continue;
            }
            let dmaps = max_over_filters_backward(&size.argmax, f, &dpooled);
            let fid = self.filters[bi];
            let padded = sim.padded(n - 1);
            let (dw, _) = conv2d_valid_backward(&padded, self.params.value(fid), &dmaps)
                .expect("shapes fixed by forward pass");
            for (g, d) in self.params.grad_mut(fid).iter_mut().zip(dw.data()) {
                *g += d;
            }
        }
    }
}

impl Ranker for Pacrr {
    type Input = PacrrInput;
    type Cache = PacrrCache;

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, input: &PacrrInput) -> Result<(f64, PacrrCache)> {
        if input.extra.len() != self.cfg.n_extra_features {
            return Err(arg_err(format!(
                "pacrr expects {} extra features, got {}",
                self.cfg.n_extra_features,
                input.extra.len()
            )));
        }
        let (enc, ecache) = self.encode(input)?;
        let (score, head) = match &self.head {
            Head::PerTerm { mlp, combine } => {
                let mut x = Vec::with_capacity(self.cfg.l_q + input.extra.len());
                let mut rows = Vec::with_capacity(self.cfg.l_q);
                for (row, &m) in enc.rows.iter().zip(&enc.mask) {
                    if m {
                        let (out, c) = mlp.forward(&self.params, row)?;
                        x.push(out[0]);
                        rows.push(Some(c));
                    } else {
                        x.push(0.0);
                        rows.push(None);
                    }
                }
                x.extend_from_slice(&input.extra);
                let (out, c) = combine.forward(&self.params, &x)?;
                (out[0], HeadCache::PerTerm { rows, combine: c })
            }
            Head::Concat { mlp } => {
                let mut x: Vec<f64> = enc.rows.concat();
                x.extend_from_slice(&input.extra);
                let (out, c) = mlp.forward(&self.params, &x)?;
                (out[0], HeadCache::Concat { mlp: c })
            }
        };
        Ok((
            score,
            PacrrCache {
                encodings: enc,
                encoding: ecache,
                head,
            },
        ))
    }

    fn backward(&mut self, input: &PacrrInput, cache: &PacrrCache, dscore: f64) {
        let w = self.cfg.row_width();
        let l_q = self.cfg.l_q;
        let mut drows = vec![vec![0.0; w]; l_q];
        match (&self.head, &cache.head) {
            (Head::PerTerm { mlp, combine }, HeadCache::PerTerm { rows, combine: cc }) => {
                let dx = combine.backward(&mut self.params, cc, &[dscore]);
                for (i, c) in rows.iter().enumerate() {
                    if let Some(c) = c {
                        drows[i] = mlp.backward(&mut self.params, c, &[dx[i]]);
                    }
                }
            }
            (Head::Concat { mlp }, HeadCache::Concat { mlp: c }) => {
                let dx = mlp.backward(&mut self.params, c, &[dscore]);
                for (i, row) in drows.iter_mut().enumerate() {
                    if cache.encodings.mask[i] {
                        row.copy_from_slice(&dx[i * w..(i + 1) * w]);
                    }
                }
            }
            _ => unreachable!("cache produced by a different head"),
        }
        self.encode_backward(input, &cache.encoding, &drows);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in ["a", "b", "c", "d", "e", "f"] {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(t, &v).unwrap();
        }
        s
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tiny(head: PacrrHead) -> PacrrConfig {
        PacrrConfig {
            l_q: 3,
            l_d: 6,
            l_g: 3,
            filters_per_size: 2,
            k: 2,
            mlp_hidden_dims: 3,
            head,
            ..PacrrConfig::default()
        }
    }

    #[test]
    fn identical_single_term() {
        let s = store();
        let m = SimMatrix::build(&toks("a"), &toks("a"), &s, 2, 3).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!((m.get(0, 1), m.get(1, 0), m.get(1, 1)), (0.0, 0.0, 0.0));
        assert_eq!(m.q_mask, vec![true, false]);
    }

    #[test]
    fn truncation_and_oov() {
        let s = store();
        let doc: Vec<String> = (0..301).map(|i| ["a", "b"][i % 2].to_string()).collect();
        let m = SimMatrix::build(&toks("a zz"), &doc, &s, 30, 300).unwrap();
        assert_eq!(m.doc_len(), 300);
        assert_eq!(m.get(0, 300), 0.0);
        assert!(!m.q_mask[1]);
        assert!((0..300).all(|j| m.get(1, j) == 0.0));
        assert!(SimMatrix::build(&[], &doc, &s, 30, 300).is_err());
    }

    #[test]
    fn row_width_and_idf_column() {
        let cfg = PacrrConfig::default();
        assert_eq!(cfg.row_width(), 7);
        let mut s = store();
        s.set_idf_table(Default::default(), crate::embed::DefaultIdf::Fixed(2.0));
        let model = Pacrr::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let input =
            PacrrInput::build(&toks("a b c d e"), &toks("a c f"), &s, &cfg, vec![0.0; 4]).unwrap();
        let (enc, _) = model.encode(&input).unwrap();
        for i in 0..5 {
            assert!((enc.rows[i][6] - 0.2).abs() < 1e-12);
        }
        assert!(enc.rows[5..].iter().all(|r| r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_filters_give_zero_blocks() {
        let cfg = tiny(PacrrHead::ConcatMlp);
        let s = store();
        let mut model = Pacrr::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for p in model.params_mut().iter_mut() {
            p.value.fill(0.0);
        }
        let input = PacrrInput {
            sim: SimMatrix::build(&toks("a b"), &toks("c d"), &s, 3, 6).unwrap(),
            idf: vec![1.0, 3.0],
            extra: vec![0.0; 4],
        };
        let mut sim = input.sim.clone();
        sim.values.iter_mut().for_each(|v| *v = 0.0);
        let input = PacrrInput { sim, ..input };
        let (enc, _) = model.encode(&input).unwrap();
        let sum: f64 = enc.rows.iter().map(|r| r[6]).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(enc.rows.iter().all(|r| r[..6].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn param_counts_match_config() {
        for head in [PacrrHead::PerTermMlp, PacrrHead::ConcatMlp] {
            let cfg = PacrrConfig {
                head,
                ..PacrrConfig::default()
            };
            let m = Pacrr::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(
                m.params().num_trainable(),
                Pacrr::expected_param_count(&cfg)
            );
        }
        let term = Pacrr::expected_param_count(&PacrrConfig::default());
        let concat = Pacrr::expected_param_count(&PacrrConfig {
            head: PacrrHead::ConcatMlp,
            ..PacrrConfig::default()
        });
        assert!(term < concat);
    }

    #[test]
    fn gradcheck_both_heads() {
        let s = store();
        for head in [PacrrHead::PerTermMlp, PacrrHead::ConcatMlp] {
            let cfg = tiny(head);
            let mut model = Pacrr::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let input = PacrrInput::build(
                &toks("a b"),
                &toks("c a e b"),
                &s,
                &cfg,
                vec![0.3, -0.2, 0.5, 0.1],
            )
            .unwrap();
            let base = model.clone();
            let mut params = model.params().clone();
            let report = finite_diff_gradcheck(
                &mut params,
                |p| {
                    let mut m = base.clone();
                    m.params = p.clone();
                    m.score(&input)
                },
                |p| {
                    model.params = p.clone();
                    let (_, c) = model.forward(&input)?;
                    model.backward(&input, &c, 1.0);
                    *p = model.params.clone();
                    Ok(())
                },
                1e-5,
            )
            .unwrap();
            assert!(report.max_relative_error <= 1e-5, "{head:?}: {report:?}");
        }
    }
}
