//! Thresholded OOD decisions and one-vs-rest evaluation.
//!
//! Scores at level `k` are the aggregated probabilities of that level's
//! classes. A pixel is assigned its argmax class (1-based) when the top score
//! is strictly greater than `tau`, and the OOD code `0` otherwise.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{LabeledImage, OOD_LABEL};
use crate::error::{Error, Result};
use crate::hierarchy::{LabelTree, LevelPartition};
use crate::losses::{aggregate, softmax_values};
use crate::trainer::{pixel_features, Mlp};
use crate::transport::ProbVector;

pub const OOD: usize = 0;

/// `{0, 0.01, ..., 1.0}`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Aggregated probabilities of the level-`level` classes.
pub fn level_scores(p: &ProbVector, tree: &LabelTree, level: usize) -> Result<Vec<f64>> {
    let partition = tree.level_partition(level)?;
    let agg = aggregate(p, tree)?;
    Ok(partition.nodes.iter().map(|&v| agg.get(v)).collect())
}

pub(crate) fn partition_scores(leaf: &[f64], partition: &LevelPartition) -> Vec<f64> {
    let mut out = vec![0.0; partition.num_classes()];
    for (slot, &p) in leaf.iter().enumerate() {
        out[partition.leaf_class[slot]] += p;
    }
    out
}

/// Argmax class (1-based, lowest index on ties) if its score exceeds `tau`,
/// else [`OOD`].
pub fn decide(scores: &[f64], tau: f64) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    match scores.get(best) {
        Some(&s) if s > tau => best + 1,
        _ => OOD,
    }
}

/// Level scores and truth for every evaluated pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPixels {
    pub classes: usize,
    /// Row-major `N x classes`.
    pub scores: Vec<f64>,
    /// 1-based class, or [`OOD`] for held-out truth.
    pub truth: Vec<usize>,
    /// Index of the source image (position in the evaluated list).
    pub image: Vec<usize>,
}

impl ScoredPixels {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn predict(&self, tau: f64) -> Vec<usize> {
        (0..self.len()).map(|i| decide(self.row(i), tau)).collect()
    }
}

/// Runs the model over the evaluation-annotated pixels of `images`.
pub fn score_images(
    model: &Mlp,
    images: &[&LabeledImage],
    tree: &LabelTree,
    level: usize,
) -> Result<ScoredPixels> {
    let partition = tree.level_partition(level)?;
    let classes = partition.num_classes();
    let mut out = ScoredPixels {
        classes,
        scores: Vec::new(),
        truth: Vec::new(),
        image: Vec::new(),
    };
    let mut degenerate = 0;
    for (idx, image) in images.iter().enumerate() {
        let (pixels, labels): (Vec<usize>, Vec<i32>) =
            image.evaluation_labels().annotated().unzip();
        if pixels.is_empty() {
            continue;
        }
        let features = pixel_features(image, &pixels, &mut degenerate);
        let cache = model.forward_batch(&features, pixels.len())?;
        let c = model.outputs();
        for (row, &label) in cache.logits().chunks(c).zip(&labels) {
            let p = softmax_values(row);
            out.scores.extend(partition_scores(&p, &partition));
            out.truth.push(if label == OOD_LABEL {
                OOD
            } else {
                partition.leaf_class[label as usize - 1] + 1
            });
            out.image.push(idx);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    /// 1-based class index.
    pub class: usize,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub tpr: f64,
    pub tnr: f64,
    pub bacc: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(class: usize, tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64, empty: f64| {
            if den == 0 {
                empty
            } else {
                num as f64 / den as f64
            }
        };
        let tpr = ratio(tp, tp + fn_, 0.0);
        // No negatives means no negative can be misclassified.
        let tnr = ratio(tn, tn + fp, 1.0);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_, 0.0);
        Self {
            class,
            support: tp + fn_,
            tp,
            fp,
            fn_,
            tn,
            tpr,
            tnr,
            bacc: 0.5 * (tpr + tnr),
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    /// Classes without annotated pixels; left out of the macro means.
    pub excluded: Vec<usize>,
    pub macro_tpr: f64,
    pub macro_bacc: f64,
    pub macro_f1: f64,
    pub pixels: u64,
}

impl MetricReport {
    fn from_classes(per_class: Vec<ClassMetrics>, pixels: u64) -> Self {
        let (present, excluded): (Vec<&ClassMetrics>, Vec<&ClassMetrics>) =
            per_class.iter().partition(|m| m.support > 0);
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
            }
        };
        let (macro_tpr, macro_bacc, macro_f1) = (mean(|m| m.tpr), mean(|m| m.bacc), mean(|m| m.f1));
        let excluded = excluded.iter().map(|m| m.class).collect();
        Self {
            per_class,
            excluded,
            macro_tpr,
            macro_bacc,
            macro_f1,
            pixels,
        }
    }
}

fn check_pairs(pred: &[usize], truth: &[usize], classes: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c > classes) {
        return Err(Error::DimensionMismatch {
            expected: classes,
            actual: bad,
        });
    }
    Ok(())
}

/// One-vs-rest metrics counted pixel by pixel. OOD predictions are misses for
/// the true class; OOD truth pixels are negatives for every class.
pub fn one_vs_rest_metrics(
    pred: &[usize],
    truth: &[usize],
    classes: usize,
) -> Result<MetricReport> {
    check_pairs(pred, truth, classes)?;
    let per_class = (1..=classes)
        .map(|c| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (&p, &t) in pred.iter().zip(truth) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    (false, false) => tn += 1,
                }
            }
            ClassMetrics::from_counts(c, tp, fp, fn_, tn)
        })
        .collect();
    Ok(MetricReport::from_classes(per_class, pred.len() as u64))
}

/// Rows are truth, columns predictions; index 0 is OOD on both axes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// Row-major `(classes + 1) x (classes + 1)`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; (classes + 1) * (classes + 1)],
        }
    }

    fn dim(&self) -> usize {
        self.classes + 1
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.dim() + pred]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.dim()..(truth + 1) * self.dim()]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Each row divided by its total; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for r in 0..d {
            let total = self.row_total(r);
            if total > 0 {
                for c in 0..d {
                    out[r * d + c] = self.get(r, c) as f64 / total as f64;
                }
            }
        }
        out
    }

    /// One-vs-rest metrics derived from the tallies.
    pub fn metrics(&self) -> MetricReport {
        let d = self.dim();
        let total = self.total();
        let per_class = (1..d)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_ = self.row_total(c) - tp;
                let col: u64 = (0..d).map(|r| self.get(r, c)).sum();
                let fp = col - tp;
                ClassMetrics::from_counts(c, tp, fp, fn_, total - tp - fn_ - fp)
            })
            .collect();
        MetricReport::from_classes(per_class, total)
    }
}

pub fn confusion_matrix(
    pred: &[usize],
    truth: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    check_pairs(pred, truth, classes)?;
    let mut cm = ConfusionMatrix::new(classes);
    let d = classes + 1;
    for (&p, &t) in pred.iter().zip(truth) {
        cm.counts[t * d + p] += 1;
    }
    Ok(cm)
}

/// Fold-averaged row-normalized confusion. Each row is averaged over the
/// folds in which that truth class occurs.
pub fn average_row_normalized(folds: &[ConfusionMatrix]) -> Vec<f64> {
    let Some(first) = folds.first() else {
        return Vec::new();
    };
    let d = first.classes + 1;
    let mut sum = vec![0.0; d * d];
    let mut present = vec![0usize; d];
    for cm in folds {
        let normalized = cm.row_normalized();
        for r in 0..d {
            if cm.row_total(r) > 0 {
                present[r] += 1;
                for c in 0..d {
                    sum[r * d + c] += normalized[r * d + c];
                }
            }
        }
    }
    for r in 0..d {
        if present[r] > 0 {
            for c in 0..d {
                sum[r * d + c] /= present[r] as f64;
            }
        }
    }
    sum
}

/// Mean over ID truth rows of the share predicted as a different ID class
/// (OOD predictions are not counted as cross-branch errors).
pub fn cross_class_error(normalized: &[f64], classes: usize) -> f64 {
    let d = classes + 1;
    let rows: Vec<f64> = (1..d)
        .filter(|&r| normalized[r * d..(r + 1) * d].iter().any(|&v| v > 0.0))
        .map(|r| {
            (1..d)
                .filter(|&c| c != r)
                .map(|c| normalized[r * d + c])
                .sum()
        })
        .collect();
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().sum::<f64>() / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub ood_fraction: f64,
    pub macro_tpr: f64,
    pub macro_bacc: f64,
    pub macro_f1: f64,
}

pub fn tau_sweep(scored: &ScoredPixels, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    grid.iter()
        .map(|&tau| {
            let pred = scored.predict(tau);
            let ood = pred.iter().filter(|&&p| p == OOD).count();
            let cm = confusion_matrix(&pred, &scored.truth, scored.classes)?;
            let m = cm.metrics();
            Ok(SweepPoint {
                tau,
                ood_fraction: if pred.is_empty() {
                    0.0
                } else {
                    ood as f64 / pred.len() as f64
                },
                macro_tpr: m.macro_tpr,
                macro_bacc: m.macro_bacc,
                macro_f1: m.macro_f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauSelection {
    pub tau: f64,
    pub sweep: Vec<SweepPoint>,
}

/// Threshold with the highest macro-F1; ties go to the smallest threshold.
pub fn select_tau(scored: &ScoredPixels, grid: &[f64]) -> Result<TauSelection> {
    let sweep = tau_sweep(scored, grid)?;
    let mut best = &sweep[0];
    for point in &sweep[1..] {
        if point.macro_f1 > best.macro_f1
            || (point.macro_f1 == best.macro_f1 && point.tau < best.tau)
        {
            best = point;
        }
    }
    Ok(TauSelection {
        tau: best.tau,
        sweep,
    })
}

/// Validation-driven threshold for a trained model.
pub fn select_tau_for_model(
    model: &Mlp,
    validation: &[&LabeledImage],
    tree: &LabelTree,
    level: usize,
    grid: &[f64],
) -> Result<TauSelection> {
    select_tau(&score_images(model, validation, tree, level)?, grid)
}

/// Macro-F1 of each image that has evaluated pixels, in image order.
pub fn per_image_f1(scored: &ScoredPixels, tau: f64) -> Result<Vec<f64>> {
    let pred = scored.predict(tau);
    let Some(&last) = scored.image.iter().max() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for img in 0..=last {
        let (p, t): (Vec<usize>, Vec<usize>) = scored
            .image
            .iter()
            .zip(pred.iter().zip(&scored.truth))
            .filter(|(&i, _)| i == img)
            .map(|(_, (&p, &t))| (p, t))
            .unzip();
        if !p.is_empty() {
            out.push(one_vs_rest_metrics(&p, &t, scored.classes)?.macro_f1);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Differences had zero variance; `p` is reported as 1.
    pub degenerate: bool,
}

/// Two-sided paired-sample t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let t = if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        return Ok(TTest {
            t,
            p: 1.0,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}
