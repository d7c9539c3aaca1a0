use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Result};
use crate::numerics::{squared_distance, Matrix};

/// (anchor, positive, negative) row indices into one minibatch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn push(&mut self, anchor: usize, positive: usize, negative: usize) {
        self.anchor.push(anchor);
        self.positive.push(positive);
        self.negative.push(negative);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.anchor
            .iter()
            .zip(&self.positive)
            .zip(&self.negative)
            .map(|((&a, &p), &n)| (a, p, n))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletStrategy {
    /// One uniformly random valid (positive, negative) pair per eligible anchor.
    Random,
    /// Farthest positive and nearest negative per anchor under the current embeddings.
    #[default]
    BatchHard,
}

/// Anchors that have at least one other sample of their class and at least
/// one sample of another class.
fn eligible_anchors(labels: &[usize]) -> impl Iterator<Item = usize> + '_ {
    (0..labels.len()).filter(move |&a| {
        let same = labels
            .iter()
            .enumerate()
            .any(|(i, &l)| i != a && l == labels[a]);
        let other = labels.iter().any(|&l| l != labels[a]);
        same && other
    })
}

pub fn sample_random<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> TripletBatch {
    let mut batch = TripletBatch::default();
    for a in eligible_anchors(labels) {
        let positives: Vec<usize> = (0..labels.len())
            .filter(|&i| i != a && labels[i] == labels[a])
            .collect();
        let negatives: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] != labels[a])
            .collect();
        let p = positives[rng.gen_range(0..positives.len())];
        let n = negatives[rng.gen_range(0..negatives.len())];
        batch.push(a, p, n);
    }
    batch
}

/// Ties resolve to the lower index.
pub fn mine_batch_hard(labels: &[usize], embeddings: &Matrix) -> Result<TripletBatch> {
    ensure_shape("embedding rows", labels.len(), embeddings.rows())?;
    let mut batch = TripletBatch::default();
    for a in eligible_anchors(labels) {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for i in 0..labels.len() {
            if i == a {
                continue;
            }
            let d = squared_distance(embeddings.row(a), embeddings.row(i));
            if labels[i] == labels[a] {
                if hardest_pos.map_or(true, |(_, best)| d > best) {
                    hardest_pos = Some((i, d));
                }
            } else if hardest_neg.map_or(true, |(_, best)| d < best) {
                hardest_neg = Some((i, d));
            }
        }
        if let (Some((p, _)), Some((n, _))) = (hardest_pos, hardest_neg) {
            batch.push(a, p, n);
        }
    }
    Ok(batch)
}

pub fn sample_triplets<R: Rng + ?Sized>(
    labels: &[usize],
    embeddings: &Matrix,
    strategy: TripletStrategy,
    rng: &mut R,
) -> Result<TripletBatch> {
    match strategy {
        TripletStrategy::Random => Ok(sample_random(labels, rng)),
        TripletStrategy::BatchHard => mine_batch_hard(labels, embeddings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn single_class_batch_has_no_triplets() {
        let emb = Matrix::zeros(3, 2);
        let mut rng = rng_from_seed(0);
        for strategy in [TripletStrategy::Random, TripletStrategy::BatchHard] {
            assert!(sample_triplets(&[1, 1, 1], &emb, strategy, &mut rng)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn forced_triplets_for_two_plus_one_batch() {
        let emb = Matrix::from_rows(&[[0.0], [1.0], [5.0]]).unwrap();
        let expected = TripletBatch {
            anchor: alloc::vec![0, 1],
            positive: alloc::vec![1, 0],
            negative: alloc::vec![2, 2],
        };
        let mut rng = rng_from_seed(9);
        assert_eq!(sample_random(&[0, 0, 1], &mut rng), expected);
        assert_eq!(mine_batch_hard(&[0, 0, 1], &emb).unwrap(), expected);
    }

    #[test]
    fn batch_hard_picks_extremes() {
        // anchor 0 (class 0): positives at 1.0 and 3.0, negatives at 2.0 and 10.0
        let emb = Matrix::from_rows(&[[0.0], [1.0], [3.0], [2.0], [10.0]]).unwrap();
        let t = mine_batch_hard(&[0, 0, 0, 1, 1], &emb).unwrap();
        assert_eq!((t.anchor[0], t.positive[0], t.negative[0]), (0, 2, 3));
    }

    #[test]
    fn random_sampling_is_reproducible() {
        let labels = [0, 1, 2, 0, 1, 2, 0, 0, 1];
        let a = sample_random(&labels, &mut rng_from_seed(5));
        let b = sample_random(&labels, &mut rng_from_seed(5));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn emitted_triplets_respect_label_roles(
            labels in proptest::collection::vec(0usize..4, 0..24),
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from_seed(seed);
            let emb = Matrix::from_vec(
                labels.len(),
                2,
                (0..labels.len() * 2).map(|i| ((i * 37) % 11) as f64).collect(),
            ).unwrap();
            for strategy in [TripletStrategy::Random, TripletStrategy::BatchHard] {
                let t = sample_triplets(&labels, &emb, strategy, &mut rng).unwrap();
                for (a, p, n) in t.iter() {
                    prop_assert!(a != p);
                    prop_assert_eq!(labels[a], labels[p]);
                    prop_assert_ne!(labels[a], labels[n]);
                }
            }
        }
    }
}
