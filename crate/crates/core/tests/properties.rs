//! Property tests for the invariants the library promises.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use biorank_core::bcnn::{
    rank_and_postprocess, sentence_candidates, Bcnn, BcnnInput, SnippetCandidate,
};
use biorank_core::checks::{jitter_params, random_tokens, tiny_configs, tiny_store};
use biorank_core::drmm::{abel_qterm_encoding, confidence_filter, gate_weights};
use biorank_core::embed::{cosine, EmbeddedTokens, EmbeddingStore};
use biorank_core::features::{FeatureNormalizer, N_EXTRA_FEATURES};
use biorank_core::index::{default_stopwords, Bm25Config, Document, InvertedIndex, ScoredDoc};
use biorank_core::model::{ModelKind, Ranker};
use biorank_core::nn::{
    kmax_pool, masked_softmax, OptimizerConfig, OptimizerState, ParamSet, Tensor,
};
use biorank_core::pacrr::{Pacrr, PacrrConfig, PacrrHead, PacrrInput};
use biorank_core::pipeline::{ensemble_vote, DocModel};
use biorank_core::text::{overlap_features, split_sentences, tokenize};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 1..max_len)
}

fn pacrr_cfg(head: PacrrHead) -> PacrrConfig {
    PacrrConfig {
        head,
        ..tiny_configs(4).pacrr
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(x in scores(12), shift in -50.0f64..50.0, mask_seed in any::<u64>()) {
        let mut r = rng(mask_seed);
        let mut mask: Vec<bool> = x.iter().map(|_| r.gen_bool(0.7)).collect();
        mask[0] = true;
        let y = masked_softmax(&x, &mask).unwrap();
        let total: f64 = y.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(y.iter().zip(&mask).all(|(v, m)| *m || *v == 0.0));
        let shifted: Vec<f64> = x.iter().zip(&mask).map(|(v, m)| if *m { v + shift } else { *v }).collect();
        let z = masked_softmax(&shifted, &mask).unwrap();
        for (a, b) in y.iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kmax_is_sorted_sub_multiset(x in scores(15), k in 1usize..20) {
        let (v, slots) = kmax_pool(&x, k).unwrap();
        prop_assert_eq!(v.len(), k);
        let real: Vec<f64> = v.iter().zip(&slots).filter(|(_, s)| s.is_some()).map(|(v, _)| *v).collect();
        prop_assert!(real.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(slots.iter().skip_while(|s| s.is_some()).all(|s| s.is_none()));
        prop_assert_eq!(real.len(), k.min(x.len()));
        let used: HashSet<usize> = slots.iter().flatten().copied().collect();
        prop_assert_eq!(used.len(), real.len());
        for (val, s) in v.iter().zip(&slots) {
            if let Some(i) = s {
                prop_assert_eq!(x[*i], *val);
            }
        }
    }

    #[test]
    fn optimizers_ignore_zero_gradients(values in prop::collection::vec(-5.0f64..5.0, 1..10), steps in 1usize..6) {
        for cfg in [OptimizerConfig::adam(0.05), OptimizerConfig::adagrad(0.08, 0.0)] {
            let mut p = ParamSet::new();
            p.insert("w", Tensor::vector(values.clone()));
            let mut opt = OptimizerState::new(cfg, &p);
            for _ in 0..steps {
                opt.step(&mut p);
            }
            prop_assert_eq!(p.iter().next().unwrap().value.data(), values.as_slice());
        }
    }

    #[test]
    fn tokenize_spans_reconstruct(text in "[A-Za-z0-9 .,;:()\\-'/éß]{0,80}") {
        let t = tokenize(&text);
        let chars: Vec<char> = text.chars().collect();
        prop_assert_eq!(t.tokens.len(), t.spans.len());
        let mut last_end = 0;
        for (tok, &(s, e)) in t.tokens.iter().zip(&t.spans) {
            prop_assert!(s < e && s >= last_end);
            last_end = e;
            let piece: String = chars[s..e].iter().collect();
            prop_assert_eq!(&piece.to_lowercase(), tok);
        }
        let joined: Vec<String> = t.spans.iter().map(|&(s, e)| chars[s..e].iter().collect()).collect();
        prop_assert_eq!(tokenize(&joined.join(" ")).tokens, t.tokens);
    }

    #[test]
    fn sentences_tile_tokens(words in prop::collection::vec("[a-zA-Z]{1,6}|[A-Z][a-z]{0,4}\\.|e\\.g\\.|[0-9]{1,3}[.!?]", 0..30)) {
        let text = words.join(" ");
        let sentences = split_sentences(&text);
        for w in sentences.windows(2) {
            prop_assert!(w[0].end_char <= w[1].start_char);
        }
        for &(s, e) in &tokenize(&text).spans {
            prop_assert!(sentences.iter().any(|sp| sp.start_char <= s && e <= sp.end_char));
        }
    }

    #[test]
    fn overlap_features_bounded_and_order_free(seed in any::<u64>(), qlen in 1usize..6, dlen in 0usize..20) {
        let mut r = rng(seed);
        let q = tokenize(&random_tokens(&mut r, qlen, 12).join(" "));
        let mut words = random_tokens(&mut r, dlen, 12);
        let d = tokenize(&words.join(" "));
        let idf = |t: &str| t.len() as f64;
        let f = overlap_features(&q, &d, idf);
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        words.shuffle(&mut r);
        let g = overlap_features(&q, &tokenize(&words.join(" ")), idf);
        prop_assert_eq!(f[0], g[0]);
        prop_assert_eq!(f[1], g[1]);
    }

    #[test]
    fn cosine_is_bounded(u in prop::collection::vec(-1e3f64..1e3, 1..8), seed in any::<u64>()) {
        let mut r = rng(seed);
        let v: Vec<f64> = u.iter().map(|_| r.gen_range(-1e3..1e3)).collect();
        let c = cosine(&u, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-12 || u.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn embeddings_round_trip(seed in any::<u64>(), n in 1usize..10, dim in 1usize..6) {
        let store = tiny_store(n, dim, &mut rng(seed));
        let mut buf = Vec::new();
        store.write_text(&mut buf).unwrap();
        let back = EmbeddingStore::read_text(buf.as_slice()).unwrap();
        prop_assert_eq!(back.vocab_tokens(), store.vocab_tokens());
        for i in 0..n {
            for (a, b) in back.row(i).iter().zip(store.row(i)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn retrieval_is_a_prefix_of_the_full_ranking(seed in any::<u64>(), n in 1usize..40, qlen in 1usize..4) {
        let mut r = rng(seed);
        let docs: Vec<Document> = (0..20)
            .map(|i| {
                let len = r.gen_range(1..15);
                Document::new(format!("d{i}"), "", random_tokens(&mut r, len, 30).join(" ")).unwrap()
            })
            .collect();
        let index = InvertedIndex::build(docs, default_stopwords()).unwrap();
        let q = tokenize(&random_tokens(&mut r, qlen, 40).join(" "));
        let cfg = Bm25Config::default();
        let all = index.score_all(&cfg, &q);
        let top = index.retrieve_top_n(&cfg, &q, n);
        prop_assert_eq!(&all[..n.min(all.len())], top.as_slice());
        let terms: HashSet<&str> = q.tokens.iter().map(String::as_str).collect();
        for d in &all {
            let doc = index.document(&d.id).unwrap();
            prop_assert!(doc.tokens.tokens.iter().any(|t| terms.contains(t.as_str())));
        }
    }

    #[test]
    fn term_pacrr_ignores_masked_row_positions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let store = tiny_store(6, 4, &mut r);
        let mut m = Pacrr::new(pacrr_cfg(PacrrHead::PerTermMlp), &mut r).unwrap();
        jitter_params(&mut m, 0.3, &mut r);
        let doc = random_tokens(&mut r, 6, 6);
        let extra = vec![0.3; N_EXTRA_FEATURES];
        let score = |q: &[&str]| {
            let q: Vec<String> = q.iter().map(|s| s.to_string()).collect();
            let input = PacrrInput::build(&q, &doc, &store, m.config(), extra.clone()).unwrap();
            m.score(&input).unwrap()
        };
        let a = score(&["t1", "oov1", "oov2"]);
        let b = score(&["t1", "oov2", "oov1"]);
        let c = score(&["t1"]);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn pacrr_ignores_tokens_past_l_d(seed in any::<u64>(), extra_len in 1usize..10) {
        let mut r = rng(seed);
        let store = tiny_store(6, 4, &mut r);
        for head in [PacrrHead::PerTermMlp, PacrrHead::ConcatMlp] {
            let mut m = Pacrr::new(pacrr_cfg(head), &mut r).unwrap();
            jitter_params(&mut m, 0.3, &mut r);
            let q = random_tokens(&mut r, 3, 7);
            let doc = random_tokens(&mut r, m.config().l_d, 7);
            let mut longer = doc.clone();
            longer.extend(random_tokens(&mut r, extra_len, 7));
            let s = |d: &[String]| m.score(&PacrrInput::build(&q, d, &store, m.config(), vec![0.1; 4]).unwrap()).unwrap();
            prop_assert_eq!(s(&doc).to_bits(), s(&longer).to_bits());
        }
    }

    #[test]
    fn pacrr_idf_column_sums_to_one(seed in any::<u64>(), qlen in 1usize..5) {
        let mut r = rng(seed);
        let store = tiny_store(6, 4, &mut r);
        let m = Pacrr::new(pacrr_cfg(PacrrHead::ConcatMlp), &mut r).unwrap();
        let mut q = random_tokens(&mut r, qlen, 8);
        q[0] = "t0".into();
        let doc = random_tokens(&mut r, 5, 8);
        let (enc, _) = m.encode(&PacrrInput::build(&q, &doc, &store, m.config(), vec![0.0; 4]).unwrap()).unwrap();
        let total: f64 = enc.rows.iter().zip(&enc.mask).filter(|(_, &m)| m).map(|(row, _)| row[enc.width - 1]).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (row, &unmasked) in enc.rows.iter().zip(&enc.mask) {
            let last = row[enc.width - 1];
            let ok = if unmasked {
                (last > 0.0 && last < 1.0) || total == last
            } else {
                row.iter().all(|&v| v == 0.0)
            };
            prop_assert!(ok);
        }
    }

    #[test]
    fn gate_and_attention_are_distributions(seed in any::<u64>(), qlen in 1usize..6, dlen in 1usize..8, shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let store = Arc::new(tiny_store(6, 3, &mut r));
        let q = EmbeddedTokens::new(&store, &random_tokens(&mut r, qlen, 6));
        let w: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        // equal idf: moving the idf weight adds the same constant to every logit
        let idf = vec![1.0; qlen];
        let g = gate_weights(&q, &idf, &w).unwrap();
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut w2 = w.clone();
        w2[3] += shift;
        let g2 = gate_weights(&q, &idf, &w2).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }

        let cq: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let docs: Vec<Vec<f64>> = (0..dlen).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = docs.iter().map(Vec::as_slice).collect();
        let mut mask: Vec<bool> = (0..dlen).map(|_| r.gen_bool(0.7)).collect();
        mask[0] = true;
        let enc = abel_qterm_encoding(&cq, &refs, &mask).unwrap();
        prop_assert!((enc.attention.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn confidence_filter_is_a_subsequence(seed in any::<u64>(), n in 0usize..30, t_d in 1usize..40, t_c in 0.001f64..0.5) {
        let mut r = rng(seed);
        let mut s: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let docs: Vec<ScoredDoc> = s.iter().enumerate().map(|(i, &score)| ScoredDoc { id: format!("d{i}"), score }).collect();
        let kept = confidence_filter(&docs, t_d, t_c);
        let mut it = docs.iter();
        for k in &kept {
            prop_assert!(it.any(|d| d == k));
        }
        let tiny = confidence_filter(&docs, t_d, 1e-300);
        prop_assert_eq!(tiny.as_slice(), &docs[..t_d.min(n)]);
    }

    #[test]
    fn identical_bcnn_streams_have_unit_similarity(seed in any::<u64>(), len in 1usize..40) {
        let mut r = rng(seed);
        let store = Arc::new(tiny_store(12, 4, &mut r));
        let cfg = tiny_configs(4).bcnn;
        let mut m = Bcnn::new(cfg.clone(), &mut r).unwrap();
        jitter_params(&mut m, 0.3, &mut r);
        let toks = random_tokens(&mut r, len, 12);
        let input = BcnnInput::new(&store, &toks, &toks, &cfg, vec![0.2; 4]);
        let (_, cache) = m.forward(&input).unwrap();
        for s in &cache.sims {
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn bcnn_probability_is_monotone_in_bias(seed in any::<u64>(), bump in 0.01f64..3.0) {
        let mut r = rng(seed);
        let store = Arc::new(tiny_store(12, 4, &mut r));
        let cfg = tiny_configs(4).bcnn;
        let mut m = Bcnn::new(cfg.clone(), &mut r).unwrap();
        jitter_params(&mut m, 0.3, &mut r);
        let input = BcnnInput::new(&store, &random_tokens(&mut r, 4, 12), &random_tokens(&mut r, 9, 12), &cfg, vec![0.5; 4]);
        let p = m.probability(&input).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        let id = m.params().id_of("logistic.bias").unwrap();
        m.params_mut().value_mut(id).data_mut()[0] += bump;
        prop_assert!(m.probability(&input).unwrap() > p);
    }

    #[test]
    fn postprocess_keeps_a_grouped_subset(seed in any::<u64>(), n_docs in 1usize..6, k_s in 1usize..12, post in any::<bool>()) {
        let mut r = rng(seed);
        let mut cands: Vec<(SnippetCandidate, f64)> = Vec::new();
        for d in 0..n_docs {
            let doc_score = f64::from(r.gen_range(0..4));
            let text = "First one here. Second sentence now. Third and last.";
            for c in sentence_candidates(&format!("d{d}"), text, doc_score, 40) {
                cands.push((c, r.gen_range(0.0..1.0)));
            }
        }
        let out = rank_and_postprocess(cands.clone(), k_s, post);
        prop_assert!(out.len() <= k_s);
        let keys = |v: &[(SnippetCandidate, f64)]| -> Vec<(String, usize)> { v.iter().map(|(c, _)| (c.doc_id.clone(), c.sentence_index)).collect() };
        let all: HashSet<(String, usize)> = keys(&cands).into_iter().collect();
        let got = keys(&out);
        prop_assert_eq!(got.iter().collect::<HashSet<_>>().len(), got.len());
        prop_assert!(got.iter().all(|k| all.contains(k)));
        // the survivors are the top k_s by score
        let min_kept = out.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let dropped = cands.iter().filter(|(c, _)| !got.contains(&(c.doc_id.clone(), c.sentence_index)));
        for (_, s) in dropped {
            prop_assert!(*s <= min_kept);
        }
        if post {
            let mut seen: Vec<&str> = Vec::new();
            for (c, _) in &out {
                if seen.last() != Some(&c.doc_id.as_str()) {
                    prop_assert!(!seen.contains(&c.doc_id.as_str()));
                    seen.push(&c.doc_id);
                }
            }
            prop_assert!(out.windows(2).all(|w| w[0].0.doc_score >= w[1].0.doc_score));
        }
    }

    #[test]
    fn ensemble_of_copies_is_identity(seed in any::<u64>(), len in 0usize..15, copies in 1usize..12) {
        let mut r = rng(seed);
        let mut run: Vec<u32> = (0..len as u32).collect();
        run.shuffle(&mut r);
        prop_assert_eq!(ensemble_vote(&vec![run.clone(); copies], 10), run[..len.min(10)].to_vec());
    }

    #[test]
    fn doc_models_are_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let store = Arc::new(tiny_store(8, 4, &mut r));
        let configs = tiny_configs(4);
        for kind in ModelKind::ALL.into_iter().filter(|k| *k != ModelKind::Bcnn) {
            let mut m = DocModel::new(kind, configs.doc_config(kind, 4).unwrap(), FeatureNormalizer::identity(4), &mut r).unwrap();
            jitter_params(&mut m.net, 0.3, &mut r);
            let mut q = random_tokens(&mut r, 3, 10);
            q[0] = "t0".into();
            let d = random_tokens(&mut r, 7, 10);
            let input = m.input(&store, &q, &d, &[0.1, 0.2, 0.3, 0.4], false).unwrap();
            let a = m.net.score(&input).unwrap();
            prop_assert_eq!(a.to_bits(), m.net.score(&input).unwrap().to_bits());
            prop_assert!(a.is_finite());
        }
    }
}

/// Exact trainable-parameter counts for both PACRR heads, written out by
/// hand: TERM-PACRR shares its MLP across rows and must be smaller.
#[test]
fn term_pacrr_has_fewer_parameters() {
    let mut r = rng(1);
    for l_q in 2..6 {
        let base = PacrrConfig {
            l_q,
            ..pacrr_cfg(PacrrHead::PerTermMlp)
        };
        let (f, k, l_g, h) = (
            base.filters_per_size,
            base.k,
            base.l_g,
            base.mlp_hidden_dims,
        );
        let convs: usize = (2..=l_g).map(|n| f * n * n).sum();
        let width = l_g * k + 1;
        let term = convs + (width * h + h) + (h + 1) + (l_q + 4 + 1);
        let concat_in = l_q * width + 4;
        let concat = convs + (concat_in * h + h) + (h + 1);
        let t = Pacrr::new(base.clone(), &mut r).unwrap();
        let c = Pacrr::new(
            PacrrConfig {
                head: PacrrHead::ConcatMlp,
                ..base
            },
            &mut r,
        )
        .unwrap();
        assert_eq!(t.params().num_trainable(), term);
        assert_eq!(c.params().num_trainable(), concat);
        assert!(term < concat);
    }
}

#[test]
fn stopword_free_index_statistics_are_consistent() {
    let mut r = rng(9);
    let docs: Vec<Document> = (0..30)
        .map(|i| {
            let len = r.gen_range(1..25);
            let mut words = random_tokens(&mut r, len, 20);
            words.push("the".into());
            Document::new(format!("d{i:02}"), "", words.join(" ")).unwrap()
        })
        .collect();
    let index = InvertedIndex::build(docs.clone(), default_stopwords()).unwrap();
    let mut df: HashMap<String, BTreeSet<String>> = HashMap::new();
    for d in &docs {
        for t in &d.tokens.tokens {
            df.entry(t.clone()).or_default().insert(d.id.clone());
        }
    }
    for (t, ids) in &df {
        if index.stopwords().contains(t) {
            assert_eq!(index.df(t), 0);
        } else {
            assert_eq!(index.df(t), ids.len());
            let posted: Vec<&str> = index
                .postings(t)
                .iter()
                .map(|p| index.documents()[p.doc as usize].id.as_str())
                .collect();
            assert_eq!(posted, ids.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
    let mean = docs
        .iter()
        .map(|d| d.tokens.tokens.len() as f64)
        .sum::<f64>()
        / docs.len() as f64;
    assert!((index.avg_doc_length() - mean).abs() < 1e-12);
}
