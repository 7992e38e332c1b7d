//! Loss kernels over leaf logits.
//!
//! Every kernel works on one pixel: `softmax(logits)` is compared with a crisp
//! leaf target. [`SemanticLoss`] bundles a [`LossConfig`] with the weighted
//! tree (and its ground distances) and returns values together with exact
//! gradients with respect to the logits. [`SemanticLoss::batch_loss`] reduces
//! over the annotated pixels of a batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{DistanceMatrix, EdgeWeightScheme, LabelTree};
use crate::transport::{wasserstein_crisp, OneHot, ProbVector};

/// Floor applied to probabilities before taking logs.
pub const LOG_EPSILON: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::NotSimplex("empty logits".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(ProbVector::from_normalized(softmax_values(logits)))
}

pub(crate) fn softmax_values(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|e| *e /= total);
    out
}

fn clamped_log(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0).ln()
}

fn check_target(g: OneHot, len: usize) -> Result<()> {
    if g.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: g.len(),
        });
    }
    Ok(())
}

/// `-log p[target]`, with the probability clamped to `[epsilon, 1]`.
pub fn cross_entropy(p: &ProbVector, g: OneHot, epsilon: f64) -> Result<f64> {
    check_target(g, p.len())?;
    Ok(-clamped_log(p.values()[g.index()], epsilon))
}

/// `alpha * CE + beta * W` with the crisp Wasserstein term.
pub fn wasserstein_ce(
    p: &ProbVector,
    g: OneHot,
    ground: &DistanceMatrix,
    cfg: &LossConfig,
) -> Result<f64> {
    let ce = cross_entropy(p, g, cfg.epsilon)?;
    let w = wasserstein_crisp(p, g, ground)?;
    Ok(cfg.alpha * ce + cfg.beta * w)
}

/// Probabilities of every node: leaf mass summed over each subtree.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedProb {
    values: Vec<f64>,
}

impl AggregatedProb {
    /// Indexed by node position (ascending node id).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }
}

/// Pushes leaf mass up the tree by a bottom-up subtree sum.
pub fn aggregate(p: &ProbVector, tree: &LabelTree) -> Result<AggregatedProb> {
    if p.len() != tree.num_leaves() {
        return Err(Error::DimensionMismatch {
            expected: tree.num_leaves(),
            actual: p.len(),
        });
    }
    Ok(AggregatedProb {
        values: aggregate_values(p.values(), tree),
    })
}

pub(crate) fn aggregate_values(leaf: &[f64], tree: &LabelTree) -> Vec<f64> {
    let mut values = zero_padded(leaf, tree);
    for &v in tree.post_order() {
        if let Some(parent) = tree.parent(v) {
            values[parent] += values[v];
        }
    }
    values
}

/// Same aggregation through the adjacency power series `sum_k A^k p~`.
pub fn aggregate_power_series(p: &ProbVector, tree: &LabelTree) -> Result<AggregatedProb> {
    if p.len() != tree.num_leaves() {
        return Err(Error::DimensionMismatch {
            expected: tree.num_leaves(),
            actual: p.len(),
        });
    }
    let padded = zero_padded(p.values(), tree);
    Ok(AggregatedProb {
        values: tree.adjacency().power_series(&padded),
    })
}

fn zero_padded(leaf: &[f64], tree: &LabelTree) -> Vec<f64> {
    let mut values = vec![0.0; tree.num_nodes()];
    for (slot, &node) in tree.leaves().iter().enumerate() {
        values[node] = leaf[slot];
    }
    values
}

/// Weighted CE over all non-root nodes of the tree:
/// `-sum_v w_v g+_v log p+_v`. Only nodes on the target's root path have
/// `g+_v = 1`.
pub fn tree_ce(p: &ProbVector, g: OneHot, tree: &LabelTree, epsilon: f64) -> Result<f64> {
    check_target(g, p.len())?;
    if !tree.is_weighted() {
        return Err(Error::WeightsUnassigned);
    }
    let agg = aggregate(p, tree)?;
    let mut total = 0.0;
    for v in tree.path_to_root(g.index()) {
        let w = tree.weight(v).unwrap_or(0.0);
        if w != 0.0 {
            total += w * -clamped_log(agg.get(v), epsilon);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Wasserstein,
    WassersteinCe,
    TreeCe,
}

impl LossKind {
    pub fn short_name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Wasserstein => "w",
            LossKind::WassersteinCe => "wce",
            LossKind::TreeCe => "tce",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        match name {
            "ce" => Some(LossKind::CrossEntropy),
            "w" => Some(LossKind::Wasserstein),
            "wce" => Some(LossKind::WassersteinCe),
            "tce" => Some(LossKind::TreeCe),
            _ => None,
        }
    }

    /// Whether the edge-weight scheme affects this loss.
    pub fn uses_scheme(self) -> bool {
        self != LossKind::CrossEntropy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub scheme: EdgeWeightScheme,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            alpha: 0.5,
            beta: 0.5,
            scheme: EdgeWeightScheme::LeafOnly,
            epsilon: LOG_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind, scheme: EdgeWeightScheme) -> Self {
        Self {
            kind,
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidLossConfig(
                "alpha and beta must be non-negative".into(),
            ));
        }
        if self.kind == LossKind::WassersteinCe && self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::InvalidLossConfig(
                "alpha and beta are both zero".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidLossConfig(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// e.g. `wce-hier`, `ce`.
    pub fn label(&self) -> String {
        if self.kind.uses_scheme() {
            format!("{}-{}", self.kind.short_name(), self.scheme.short_name())
        } else {
            self.kind.short_name().to_string()
        }
    }
}

/// Logits, crisp targets and annotation mask for `B` pixels over `C` leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBatch {
    pub classes: usize,
    /// Row-major `B x C`.
    pub logits: Vec<f64>,
    /// Leaf slot per pixel; ignored where the mask is false.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn annotated(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    /// Row-major `B x C`: gradient of `value` with respect to the logits.
    pub grad: Vec<f64>,
    pub annotated: usize,
}

/// A loss configuration bound to its tree.
#[derive(Debug, Clone)]
pub struct SemanticLoss {
    cfg: LossConfig,
    tree: LabelTree,
    ground: Option<DistanceMatrix>,
    /// Per leaf slot: `(node, weight)` for nonzero-weight nodes on the root path.
    paths: Vec<Vec<(usize, f64)>>,
}

impl SemanticLoss {
    pub fn new(cfg: LossConfig, tree: &LabelTree) -> Result<Self> {
        cfg.validate()?;
        let tree = if cfg.kind.uses_scheme() {
            tree.assign_weights(&cfg.scheme)?
        } else {
            tree.clone()
        };
        let ground = match cfg.kind {
            LossKind::Wasserstein | LossKind::WassersteinCe => Some(tree.ground_distance()?),
            _ => None,
        };
        let paths = if cfg.kind == LossKind::TreeCe {
            (0..tree.num_leaves())
                .map(|slot| {
                    tree.path_to_root(slot)
                        .into_iter()
                        .map(|v| (v, tree.weight(v).unwrap_or(0.0)))
                        .filter(|&(_, w)| w != 0.0)
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            tree,
            ground,
            paths,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// The tree with this loss's edge weights.
    pub fn tree(&self) -> &LabelTree {
        &self.tree
    }

    pub fn ground_distance(&self) -> Option<&DistanceMatrix> {
        self.ground.as_ref()
    }

    pub fn classes(&self) -> usize {
        self.tree.num_leaves()
    }

    fn check_pixel(&self, logits: &[f64], target: usize) -> Result<()> {
        let c = self.classes();
        if logits.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: logits.len(),
            });
        }
        if target >= c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: target + 1,
            });
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(())
    }

    pub fn value(&self, logits: &[f64], target: usize) -> Result<f64> {
        Ok(self.value_and_gradient(logits, target)?.0)
    }

    pub fn gradient(&self, logits: &[f64], target: usize) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(logits, target)?.1)
    }

    /// Loss and its gradient with respect to the logits.
    pub fn value_and_gradient(&self, logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
        self.check_pixel(logits, target)?;
        let p = softmax_values(logits);
        Ok(self.pixel(&p, target))
    }

    fn pixel(&self, p: &[f64], target: usize) -> (f64, Vec<f64>) {
        match self.cfg.kind {
            LossKind::CrossEntropy => self.ce_term(p, target),
            LossKind::Wasserstein => self.wasserstein_term(p, target),
            LossKind::WassersteinCe => {
                let (ce, ce_grad) = self.ce_term(p, target);
                let (w, w_grad) = self.wasserstein_term(p, target);
                let (a, b) = (self.cfg.alpha, self.cfg.beta);
                let grad = ce_grad
                    .iter()
                    .zip(&w_grad)
                    .map(|(gc, gw)| a * gc + b * gw)
                    .collect();
                (a * ce + b * w, grad)
            }
            LossKind::TreeCe => self.tree_ce_term(p, target),
        }
    }

    /// CE through softmax: gradient `p - g` while the clamp is inactive.
    fn ce_term(&self, p: &[f64], target: usize) -> (f64, Vec<f64>) {
        let value = -clamped_log(p[target], self.cfg.epsilon);
        let grad = if p[target] < self.cfg.epsilon {
            vec![0.0; p.len()]
        } else {
            p.iter()
                .enumerate()
                .map(|(k, &pk)| pk - f64::from(u8::from(k == target)))
                .collect()
        };
        (value, grad)
    }

    /// `sum_l M[l][t] p_l`; through softmax `dz_k = p_k (M[k][t] - value)`.
    fn wasserstein_term(&self, p: &[f64], target: usize) -> (f64, Vec<f64>) {
        let ground = self
            .ground
            .as_ref()
            .expect("ground distance built for Wasserstein losses");
        let column: Vec<f64> = (0..p.len()).map(|l| ground.get(l, target)).collect();
        let value: f64 = column.iter().zip(p).map(|(c, pl)| c * pl).sum();
        let grad = p
            .iter()
            .zip(&column)
            .map(|(pk, ck)| pk * (ck - value))
            .collect();
        (value, grad)
    }

    /// For each weighted node `v` on the target path, `-w log P_v` contributes
    /// `w (p_k - [k below v] p_k / P_v)` to `dz_k`.
    fn tree_ce_term(&self, p: &[f64], target: usize) -> (f64, Vec<f64>) {
        let agg = aggregate_values(p, &self.tree);
        let mut value = 0.0;
        let mut grad = vec![0.0; p.len()];
        let mut below = vec![false; p.len()];
        for &(v, w) in &self.paths[target] {
            let mass = agg[v];
            value += w * -clamped_log(mass, self.cfg.epsilon);
            if mass < self.cfg.epsilon {
                continue;
            }
            below.iter_mut().for_each(|b| *b = false);
            for &slot in self.tree.subtree_leaves(v) {
                below[slot] = true;
            }
            for (k, g) in grad.iter_mut().enumerate() {
                let inside = if below[k] { p[k] / mass } else { 0.0 };
                *g += w * (p[k] - inside);
            }
        }
        (value, grad)
    }

    /// Mean loss over annotated pixels; rows of unannotated pixels get a zero
    /// gradient. An empty mask yields zero loss and gradient.
    pub fn batch_loss(&self, batch: &PixelBatch) -> Result<BatchLoss> {
        let c = self.classes();
        if batch.classes != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: batch.classes,
            });
        }
        let b = batch.len();
        if batch.mask.len() != b {
            return Err(Error::DimensionMismatch {
                expected: b,
                actual: batch.mask.len(),
            });
        }
        if batch.logits.len() != b * c {
            return Err(Error::DimensionMismatch {
                expected: b * c,
                actual: batch.logits.len(),
            });
        }
        let annotated = batch.annotated();
        let mut grad = vec![0.0; b * c];
        if annotated == 0 {
            return Ok(BatchLoss {
                value: 0.0,
                grad,
                annotated,
            });
        }
        let scale = annotated as f64;
        let mut values = Vec::with_capacity(annotated);
        for i in 0..b {
            if !batch.mask[i] {
                continue;
            }
            let logits = &batch.logits[i * c..(i + 1) * c];
            let (v, g) = self.value_and_gradient(logits, batch.targets[i])?;
            values.push(v);
            for (dst, src) in grad[i * c..(i + 1) * c].iter_mut().zip(&g) {
                *dst = src / scale;
            }
        }
        Ok(BatchLoss {
            value: pairwise_sum(&values) / scale,
            grad,
            annotated,
        })
    }
}

/// Gradient of the configured loss with respect to the logits.
pub fn loss_gradient(
    logits: &[f64],
    g: OneHot,
    cfg: &LossConfig,
    tree: &LabelTree,
) -> Result<Vec<f64>> {
    SemanticLoss::new(cfg.clone(), tree)?.gradient(logits, g.index())
}

pub fn batch_loss(batch: &PixelBatch, cfg: &LossConfig, tree: &LabelTree) -> Result<BatchLoss> {
    SemanticLoss::new(cfg.clone(), tree)?.batch_loss(batch)
}

/// Index-ordered pairwise summation.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::NodeRecord;

    fn rec(id: u64, parent: Option<u64>) -> NodeRecord {
        NodeRecord {
            id,
            name: format!("n{id}"),
            parent,
            edge_weight: None,
        }
    }

    /// root 0 -> a 1, P 2 -> {b 3, c 4}
    fn three_leaf() -> LabelTree {
        LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(0)),
            rec(3, Some(2)),
            rec(4, Some(2)),
        ])
        .unwrap()
    }

    /// root 0 -> P1 1 -> {l 3, l 4}, P2 2 -> {l 5}
    fn two_parent() -> LabelTree {
        LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(0)),
            rec(3, Some(1)),
            rec(4, Some(1)),
            rec(5, Some(2)),
        ])
        .unwrap()
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for &v in p.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-16);
        }
        let big = softmax(&[1000.0, 0.0, 0.0]).unwrap();
        assert!((big.values()[0] - 1.0).abs() < 1e-15);
        assert!(big.values().iter().all(|v| v.is_finite()));
        assert!(matches!(
            softmax(&[f64::INFINITY, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn cross_entropy_cases() {
        let g = OneHot::new(0, 3).unwrap();
        assert_eq!(cross_entropy(&g.to_prob(), g, LOG_EPSILON).unwrap(), 0.0);
        let p = ProbVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!(
            (cross_entropy(&p, g, LOG_EPSILON).unwrap() - std::f64::consts::LN_2).abs() < 1e-15
        );
        let zero = ProbVector::new(vec![0.0, 0.5, 0.5]).unwrap();
        let clamped = cross_entropy(&zero, g, LOG_EPSILON).unwrap();
        assert_eq!(clamped, -LOG_EPSILON.ln());
    }

    #[test]
    fn wasserstein_ce_mix() {
        let tree = three_leaf()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap();
        let m = tree.ground_distance().unwrap();
        let p = ProbVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let g = OneHot::new(1, 3).unwrap();
        let cfg = LossConfig::new(LossKind::WassersteinCe, EdgeWeightScheme::Equal);
        let v = wasserstein_ce(&p, g, &m, &cfg).unwrap();
        assert!((v - (0.5 * std::f64::consts::LN_2 + 0.75)).abs() < 1e-15);
        assert!((v - 1.096574).abs() < 1e-6);
    }

    #[test]
    fn aggregate_subtree_sums() {
        let tree = two_parent();
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let agg = aggregate(&p, &tree).unwrap();
        assert!((agg.get(1) - 0.5).abs() < 1e-15);
        assert_eq!(agg.get(2), 0.5);
        assert!((agg.get(0) - 1.0).abs() < 1e-15);
        let hot = aggregate(&ProbVector::one_hot(1, 3), &tree).unwrap();
        assert_eq!(hot.values(), &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(aggregate(&ProbVector::uniform(2), &tree).is_err());
    }

    #[test]
    fn tree_ce_equal_scheme() {
        let tree = three_leaf()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap();
        let p = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let g = OneHot::new(1, 3).unwrap();
        let v = tree_ce(&p, g, &tree, LOG_EPSILON).unwrap();
        assert!((v + 0.5f64.ln() + 0.8f64.ln()).abs() < 1e-12);
        assert!((v - 0.916291).abs() < 1e-6);
        assert_eq!(tree_ce(&g.to_prob(), g, &tree, LOG_EPSILON).unwrap(), 0.0);
        assert!(matches!(
            tree_ce(&p, g, &three_leaf(), LOG_EPSILON),
            Err(Error::WeightsUnassigned)
        ));
    }

    #[test]
    fn ce_gradient_vanishes_at_target() {
        let loss = SemanticLoss::new(LossConfig::default(), &three_leaf()).unwrap();
        // Saturated logits give p == g up to round-off.
        let g = loss.gradient(&[-800.0, 800.0, -800.0], 1).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-300 || *v == 0.0), "{g:?}");
    }

    #[test]
    fn wce_reduces_to_ce_gradient() {
        let tree = three_leaf();
        let ce = SemanticLoss::new(LossConfig::default(), &tree).unwrap();
        let wce = SemanticLoss::new(
            LossConfig {
                alpha: 1.0,
                beta: 0.0,
                ..LossConfig::new(LossKind::WassersteinCe, EdgeWeightScheme::Equal)
            },
            &tree,
        )
        .unwrap();
        let z = [0.3, -1.2, 2.0];
        assert_eq!(
            ce.value_and_gradient(&z, 2).unwrap(),
            wce.value_and_gradient(&z, 2).unwrap()
        );
    }

    #[test]
    fn leaf_only_tree_ce_is_bitwise_ce() {
        let tree = two_parent();
        let ce = SemanticLoss::new(LossConfig::default(), &tree).unwrap();
        let tce = SemanticLoss::new(
            LossConfig::new(LossKind::TreeCe, EdgeWeightScheme::LeafOnly),
            &tree,
        )
        .unwrap();
        for (z, t) in [
            ([0.1, 0.7, -0.4], 0),
            ([3.0, -2.0, 0.5], 2),
            ([0.0, 0.0, 0.0], 1),
        ] {
            assert_eq!(
                ce.value_and_gradient(&z, t).unwrap(),
                tce.value_and_gradient(&z, t).unwrap()
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig::new(LossKind::WassersteinCe, EdgeWeightScheme::Equal);
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = -1.0;
        assert!(cfg.validate().is_err());
        assert!(SemanticLoss::new(
            LossConfig::new(LossKind::TreeCe, EdgeWeightScheme::Hierarchical),
            &three_leaf()
        )
        .is_err());
        // CE ignores the scheme, so a 2-level tree with `hier` is fine.
        assert!(SemanticLoss::new(
            LossConfig {
                scheme: EdgeWeightScheme::Hierarchical,
                ..LossConfig::default()
            },
            &three_leaf()
        )
        .is_ok());
    }

    #[test]
    fn empty_mask_batch() {
        let loss = SemanticLoss::new(LossConfig::default(), &three_leaf()).unwrap();
        let batch = PixelBatch {
            classes: 3,
            logits: vec![0.5; 6],
            targets: vec![0, 1],
            mask: vec![false, false],
        };
        let out = loss.batch_loss(&batch).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_pixel_batch_matches_pixel_loss() {
        let loss = SemanticLoss::new(
            LossConfig::new(LossKind::TreeCe, EdgeWeightScheme::Equal),
            &three_leaf(),
        )
        .unwrap();
        let z = [0.2, -0.1, 0.9];
        let batch = PixelBatch {
            classes: 3,
            logits: [z, [9.0, 9.0, 9.0]].concat(),
            targets: vec![2, 0],
            mask: vec![true, false],
        };
        let out = loss.batch_loss(&batch).unwrap();
        let (v, g) = loss.value_and_gradient(&z, 2).unwrap();
        assert_eq!(out.value, v);
        assert_eq!(&out.grad[..3], g.as_slice());
        assert_eq!(&out.grad[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
