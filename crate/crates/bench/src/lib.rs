//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treeloss::datagen::{gen_tree, GenSpec};
use treeloss::{EdgeWeightScheme, LabelTree, NodeRecord, ProbVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Balanced `tops x mids x leaves` tree carrying `scheme` weights.
pub fn balanced_tree(
    tops: usize,
    mids: usize,
    leaves: usize,
    scheme: &EdgeWeightScheme,
) -> LabelTree {
    let spec = GenSpec {
        tops,
        mids,
        leaves,
        ..GenSpec::default()
    };
    gen_tree(&spec)
        .and_then(|t| t.assign_weights(scheme))
        .expect("valid balanced tree")
}

/// Random recursive tree with exactly `leaves` leaves and weights in `[0, 10)`.
pub fn random_tree(rng: &mut impl Rng, leaves: usize) -> LabelTree {
    // Grow by splitting a random leaf into two until the leaf count is reached.
    let mut parents: Vec<Option<usize>> = vec![None, Some(0), Some(0)];
    let mut open = vec![1, 2];
    while open.len() < leaves {
        let at = rng.random_range(0..open.len());
        let node = open.swap_remove(at);
        for _ in 0..2 {
            open.push(parents.len());
            parents.push(Some(node));
        }
    }
    let records = parents
        .iter()
        .enumerate()
        .map(|(i, p)| NodeRecord {
            id: i as u64,
            name: format!("n{i}"),
            parent: p.map(|p| p as u64),
            edge_weight: p.map(|_| rng.random_range(0.0..10.0)),
        })
        .collect();
    LabelTree::from_records(records).expect("valid random tree")
}

pub fn random_prob(rng: &mut impl Rng, n: usize) -> ProbVector {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    ProbVector::new(v.into_iter().map(|x| x / s).collect()).expect("valid distribution")
}

pub fn random_logits(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-4.0..4.0)).collect()
}
