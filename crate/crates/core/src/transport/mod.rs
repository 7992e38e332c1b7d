//! Optimal transport over the leaf simplex.
//!
//! [`wasserstein_lp`] solves the transport linear program exactly and is the
//! reference. [`wasserstein_crisp`] is the closed form for a one-hot target
//! and [`wasserstein_tree`] the linear-time closed form for tree metrics.

mod network_simplex;

use crate::error::{Error, Result};
use crate::hierarchy::{DistanceMatrix, LabelTree};

/// Largest mass drift that is silently renormalized.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A point of the probability simplex over the `C` leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Validates `values`; a total mass within [`MASS_TOLERANCE`] of 1 is
    /// rescaled to 1, anything further off is rejected.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NotSimplex("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probability vector"));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::NotSimplex(format!("negative entry {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotSimplex(format!("total mass {sum}")));
        }
        if sum != 1.0 {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self { values })
    }

    /// Wraps values already known to lie on the simplex (e.g. softmax output).
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self { values }
    }

    pub fn one_hot(index: usize, len: usize) -> Self {
        let mut values = vec![0.0; len];
        values[index] = 1.0;
        Self { values }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            values: vec![1.0 / len as f64; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Index of the unit entry when the vector is exactly one-hot.
    pub fn hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hot
    }
}

/// A crisp (one-hot) ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    index: usize,
    len: usize,
}

impl OneHot {
    pub fn new(index: usize, len: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: index + 1,
            });
        }
        Ok(Self { index, len })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_prob(&self) -> ProbVector {
        ProbVector::one_hot(self.index, self.len)
    }
}

impl TryFrom<&ProbVector> for OneHot {
    type Error = Error;

    fn try_from(p: &ProbVector) -> Result<Self> {
        let index = p.hot_index().ok_or(Error::NotOneHot)?;
        Ok(Self {
            index,
            len: p.len(),
        })
    }
}

/// Flows `T[l][l']`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    size: usize,
    flows: Vec<f64>,
}

impl TransportPlan {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.flows[from * self.size + to]
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.flows
            .chunks(self.size)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.size];
        for row in self.flows.chunks(self.size) {
            for (s, f) in sums.iter_mut().zip(row) {
                *s += f;
            }
        }
        sums
    }

    pub fn cost(&self, ground: &DistanceMatrix) -> f64 {
        self.flows
            .iter()
            .zip(ground.entries())
            .map(|(f, d)| f * d)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinResult {
    pub cost: f64,
    pub plan: Option<TransportPlan>,
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Exact Wasserstein distance by linear programming, with the optimal plan.
pub fn wasserstein_lp(
    p: &ProbVector,
    q: &ProbVector,
    ground: &DistanceMatrix,
) -> Result<WassersteinResult> {
    check_len(ground.size(), p.len())?;
    check_len(ground.size(), q.len())?;
    let flows = network_simplex::solve(p.values(), q.values(), ground.entries())?;
    let plan = TransportPlan {
        size: ground.size(),
        flows,
    };
    Ok(WassersteinResult {
        cost: plan.cost(ground),
        plan: Some(plan),
    })
}

/// `p^T M g` for a crisp target `g`.
pub fn wasserstein_crisp(p: &ProbVector, g: OneHot, ground: &DistanceMatrix) -> Result<f64> {
    check_len(ground.size(), p.len())?;
    check_len(ground.size(), g.len())?;
    let column = g.index();
    Ok(p.values()
        .iter()
        .enumerate()
        .map(|(l, &pl)| ground.get(l, column) * pl)
        .sum())
}

/// Gradient of [`wasserstein_crisp`] with respect to `p`: the column `M g`.
pub fn wasserstein_crisp_gradient(g: OneHot, ground: &DistanceMatrix) -> Result<Vec<f64>> {
    check_len(ground.size(), g.len())?;
    Ok((0..ground.size())
        .map(|l| ground.get(l, g.index()))
        .collect())
}

/// Closed form on a weighted tree:
/// `sum over edges of w_e * |mass_p(below e) - mass_q(below e)|`.
pub fn wasserstein_tree(p: &ProbVector, q: &ProbVector, tree: &LabelTree) -> Result<f64> {
    check_len(tree.num_leaves(), p.len())?;
    check_len(tree.num_leaves(), q.len())?;
    if !tree.is_weighted() {
        return Err(Error::WeightsUnassigned);
    }
    let mut surplus = vec![0.0; tree.num_nodes()];
    for (slot, &node) in tree.leaves().iter().enumerate() {
        surplus[node] = p.values()[slot] - q.values()[slot];
    }
    let mut cost = 0.0;
    for &v in tree.post_order() {
        let Some(parent) = tree.parent(v) else {
            continue;
        };
        cost += tree.weight(v).unwrap_or(0.0) * surplus[v].abs();
        surplus[parent] += surplus[v];
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{EdgeWeightScheme, NodeRecord};

    fn rec(id: u64, parent: Option<u64>) -> NodeRecord {
        NodeRecord {
            id,
            name: format!("n{id}"),
            parent,
            edge_weight: None,
        }
    }

    fn unit_three_leaf() -> LabelTree {
        LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(0)),
            rec(3, Some(2)),
            rec(4, Some(2)),
        ])
        .unwrap()
        .assign_weights(&EdgeWeightScheme::Equal)
        .unwrap()
    }

    fn unit_pair() -> LabelTree {
        LabelTree::from_records(vec![rec(0, None), rec(1, Some(0)), rec(2, Some(0))])
            .unwrap()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap()
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        let drifted = ProbVector::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((drifted.values().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(
            ProbVector::new(vec![0.5, 0.6]),
            Err(Error::NotSimplex(_))
        ));
        assert!(matches!(
            ProbVector::new(vec![1.5, -0.5]),
            Err(Error::NotSimplex(_))
        ));
        assert!(matches!(
            ProbVector::new(vec![f64::NAN, 1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn one_hot_detection() {
        let g = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(OneHot::try_from(&g).unwrap().index(), 1);
        let soft = ProbVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(OneHot::try_from(&soft), Err(Error::NotOneHot)));
    }

    #[test]
    fn lp_identity_and_swap() {
        let tree = unit_pair();
        let m = tree.ground_distance().unwrap();
        let p = ProbVector::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(wasserstein_lp(&p, &p, &m).unwrap().cost, 0.0);
        let e1 = ProbVector::one_hot(0, 2);
        let e2 = ProbVector::one_hot(1, 2);
        let r = wasserstein_lp(&e1, &e2, &m).unwrap();
        assert_eq!(r.cost, 2.0);
        assert_eq!(r.plan.unwrap().get(0, 1), 1.0);
    }

    #[test]
    fn lp_dimension_mismatch() {
        let m = unit_pair().ground_distance().unwrap();
        let p = ProbVector::uniform(3);
        assert!(matches!(
            wasserstein_lp(&p, &p, &m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn crisp_half_mass() {
        let tree = unit_three_leaf();
        let m = tree.ground_distance().unwrap();
        let p = ProbVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let g = OneHot::new(1, 3).unwrap();
        let crisp = wasserstein_crisp(&p, g, &m).unwrap();
        assert!((crisp - 1.5).abs() < 1e-15);
        let lp = wasserstein_lp(&p, &g.to_prob(), &m).unwrap().cost;
        assert!((crisp - lp).abs() < 1e-12);
        assert_eq!(wasserstein_crisp(&g.to_prob(), g, &m).unwrap(), 0.0);
    }

    #[test]
    fn tree_closed_form_cases() {
        let tree = unit_three_leaf();
        let a = ProbVector::one_hot(0, 3);
        let b = ProbVector::one_hot(1, 3);
        assert_eq!(wasserstein_tree(&a, &b, &tree).unwrap(), 3.0);
        let p = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(wasserstein_tree(&p, &p, &tree).unwrap(), 0.0);
    }

    #[test]
    fn crisp_gradient_is_column() {
        let m = unit_pair().ground_distance().unwrap();
        assert_eq!(
            wasserstein_crisp_gradient(OneHot::new(0, 2).unwrap(), &m).unwrap(),
            vec![0.0, 2.0]
        );
        let zero = DistanceMatrix::from_entries(2, vec![0.0; 4]).unwrap();
        assert_eq!(
            wasserstein_crisp_gradient(OneHot::new(1, 2).unwrap(), &zero).unwrap(),
            vec![0.0, 0.0]
        );
    }
}
