#![allow(dead_code)]

use rand::Rng;
use treeloss::{LabelTree, NodeRecord, ProbVector};

fn records_from_parents(parents: &[Option<usize>], weights: Option<&[f64]>) -> Vec<NodeRecord> {
    parents
        .iter()
        .enumerate()
        .map(|(i, p)| NodeRecord {
            id: i as u64,
            name: format!("n{i}"),
            parent: p.map(|p| p as u64),
            edge_weight: match (p, weights) {
                (Some(_), Some(w)) => Some(w[i]),
                _ => None,
            },
        })
        .collect()
}

/// Random recursive tree with 2..=`max_leaves` leaves and random edge weights
/// drawn by `weight`.
pub fn random_tree<R: Rng>(
    rng: &mut R,
    max_leaves: usize,
    mut weight: impl FnMut(&mut R) -> f64,
) -> LabelTree {
    loop {
        let n = rng.random_range(3..=2 * max_leaves);
        let mut parents = vec![None];
        for i in 1..n {
            parents.push(Some(rng.random_range(0..i)));
        }
        let leaves = (0..n).filter(|&i| !parents.contains(&Some(i))).count();
        if (2..=max_leaves).contains(&leaves) {
            let weights: Vec<f64> = (0..n).map(|_| weight(rng)).collect();
            return LabelTree::from_records(records_from_parents(&parents, Some(&weights)))
                .unwrap();
        }
    }
}

/// Random unweighted tree of exactly three levels (root at level 3).
pub fn random_three_level<R: Rng>(rng: &mut R) -> LabelTree {
    let mut parents = vec![None];
    let tops = rng.random_range(2..=3);
    for t in 0..tops {
        let top = parents.len();
        parents.push(Some(0));
        // The first top branch is always full depth so the root sits at level 3.
        let mids = if t == 0 {
            rng.random_range(1..=2)
        } else {
            rng.random_range(0..=2)
        };
        if mids == 0 {
            continue;
        }
        for _ in 0..mids {
            let mid = parents.len();
            parents.push(Some(top));
            for _ in 0..rng.random_range(1..=2) {
                parents.push(Some(mid));
            }
        }
    }
    let tree = LabelTree::from_records(records_from_parents(&parents, None)).unwrap();
    assert_eq!(tree.depth(), 3);
    tree
}

/// Random point of the simplex, occasionally with exact zeros.
pub fn random_prob<R: Rng>(rng: &mut R, n: usize) -> ProbVector {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.15) {
                    0.0
                } else {
                    -rng.random::<f64>().max(1e-300).ln()
                }
            })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return ProbVector::new(v.iter().map(|x| x / s).collect()).unwrap();
        }
    }
}

pub fn random_logits<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}
