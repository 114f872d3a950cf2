//! Positive/negative training pairs drawn from each query's candidate pool.

use rand::seq::SliceRandom;
use rand::Rng;

/// Indices into a list of labeled pools: one relevant and one non-relevant
/// candidate of the same query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub query: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub pairs: Vec<TrainingPair>,
    /// Queries without at least one relevant and one non-relevant candidate.
    pub skipped: usize,
}

/// Pairs every relevant candidate of every query with a non-relevant
/// candidate of the same pool, drawn uniformly. `labels[q][i]` says whether
/// candidate `i` of query `q` is relevant.
pub fn generate_pairs<R: Rng>(labels: &[Vec<bool>], rng: &mut R) -> PairSample {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (q, pool) in labels.iter().enumerate() {
        let pos: Vec<usize> = (0..pool.len()).filter(|&i| pool[i]).collect();
        let neg: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            skipped += 1;
            continue;
        }
        for p in pos {
            let n = *neg.choose(rng).expect("non-empty");
            pairs.push(TrainingPair {
                query: q,
                pos: p,
                neg: n,
            });
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} queries lacking relevant or non-relevant candidates");
    }
    PairSample { pairs, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skips_one_sided_pools() {
        let s = generate_pairs(
            &[vec![true, true], vec![false]],
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(s.pairs.is_empty());
        assert_eq!(s.skipped, 2);
    }

    #[test]
    fn single_pair_every_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let s = generate_pairs(&[vec![false, true]], &mut rng);
            assert_eq!(
                s.pairs,
                vec![TrainingPair {
                    query: 0,
                    pos: 1,
                    neg: 0
                }]
            );
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let labels: Vec<Vec<bool>> = (0..5)
            .map(|q| (0..20).map(|i| (i + q) % 4 == 0).collect())
            .collect();
        let a = generate_pairs(&labels, &mut ChaCha8Rng::seed_from_u64(7));
        let b = generate_pairs(&labels, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        for p in &a.pairs {
            assert!(labels[p.query][p.pos] && !labels[p.query][p.neg]);
        }
    }
}
