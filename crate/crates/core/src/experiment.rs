//! Cross-validated comparison of loss configurations.
//!
//! For every seed a dataset is generated; for every fold `f` the test set is
//! fold `f`, the threshold-selection set is fold `f + 1` (cyclically) and the
//! rest is used for training. All configurations of a (seed, fold) cell share
//! the same model initialization.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_dataset, gen_tree, GenSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion_matrix, default_tau_grid, per_image_f1, score_images, select_tau, ConfusionMatrix,
    MetricReport, SweepPoint,
};
use crate::hierarchy::{EdgeWeightScheme, LabelTree};
use crate::losses::{LossConfig, LossKind};
use crate::trainer::{checkpoint, train, TrainConfig};

/// Evaluation level, either named or counted up from the leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LevelSel {
    /// The children of the root (level `K - 1`).
    Top,
    Leaf,
    Index(usize),
}

impl LevelSel {
    pub fn resolve(self, tree: &LabelTree) -> Result<usize> {
        let levels = tree.depth();
        let k = match self {
            LevelSel::Top => levels - 1,
            LevelSel::Leaf => 0,
            LevelSel::Index(k) => k,
        };
        if k >= levels {
            return Err(Error::InvalidLevel { level: k, levels });
        }
        Ok(k)
    }
}

impl FromStr for LevelSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "top" => Ok(LevelSel::Top),
            "leaf" => Ok(LevelSel::Leaf),
            _ => s
                .parse()
                .map(LevelSel::Index)
                .map_err(|_| format!("level must be top, leaf or an integer, got {s:?}")),
        }
    }
}

impl TryFrom<String> for LevelSel {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<LevelSel> for String {
    fn from(l: LevelSel) -> String {
        l.to_string()
    }
}

impl fmt::Display for LevelSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSel::Top => f.write_str("top"),
            LevelSel::Leaf => f.write_str("leaf"),
            LevelSel::Index(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub gen: GenSpec,
    /// Each seed offsets the dataset seed and the model seeds.
    pub seeds: Vec<u64>,
    /// Training settings; the `loss` field is replaced per configuration.
    pub train: TrainConfig,
    pub configs: Vec<LossConfig>,
    pub level: LevelSel,
    pub tau_grid: Vec<f64>,
    /// Pairs of configuration labels compared with a paired t-test.
    pub comparisons: Vec<(String, String)>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let cfg = |kind, scheme| LossConfig::new(kind, scheme);
        Self {
            gen: GenSpec::default(),
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            configs: vec![
                cfg(LossKind::CrossEntropy, EdgeWeightScheme::LeafOnly),
                cfg(LossKind::WassersteinCe, EdgeWeightScheme::Hierarchical),
                cfg(LossKind::TreeCe, EdgeWeightScheme::TopOnly),
                cfg(LossKind::TreeCe, EdgeWeightScheme::Equal),
                cfg(LossKind::TreeCe, EdgeWeightScheme::Hierarchical),
            ],
            level: LevelSel::Top,
            tau_grid: default_tau_grid(),
            comparisons: vec![
                ("wce-hier".into(), "ce".into()),
                ("tce-hier".into(), "ce".into()),
            ],
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        if self.gen.folds < 3 {
            return Err(Error::InvalidSplit {
                images: self.gen.images,
                folds: self.gen.folds,
            });
        }
        if self.seeds.is_empty() || self.configs.is_empty() {
            return Err(Error::InvalidTrainConfig(
                "experiment needs at least one seed and one configuration".into(),
            ));
        }
        if self.tau_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.tau_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidTrainConfig(
                "tau grid must lie in [0, 1]".into(),
            ));
        }
        let labels = self.labels();
        for (a, b) in &self.comparisons {
            if !labels.contains(a) || !labels.contains(b) {
                return Err(Error::InvalidTrainConfig(format!(
                    "comparison {a} vs {b} names an unknown configuration"
                )));
            }
        }
        for cfg in &self.configs {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.configs.iter().map(LossConfig::label).collect()
    }

    pub fn num_cells(&self) -> usize {
        self.seeds.len() * self.gen.folds * self.configs.len()
    }
}

/// Model seed shared by all configurations of a (seed, fold) cell.
pub fn model_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (fold as u64 + 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Test, threshold-selection and training image indices for `fold`.
pub fn fold_roles(folds: &[Vec<usize>], fold: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = folds.len();
    let validation = (fold + 1) % n;
    let train = (0..n)
        .filter(|&f| f != fold && f != validation)
        .flat_map(|f| folds[f].iter().copied())
        .collect();
    (folds[fold].clone(), folds[validation].clone(), train)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub tau: f64,
    pub metrics: MetricReport,
    pub confusion: ConfusionMatrix,
    pub per_image_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub seed: u64,
    pub fold: usize,
    pub config: LossConfig,
    pub trace: Vec<f64>,
    /// SHA-256 of the encoded checkpoint.
    pub checkpoint_digest: String,
    pub sweep: Vec<SweepPoint>,
    pub at_zero: Evaluated,
    pub at_selected: Evaluated,
}

impl CellResult {
    pub fn label(&self) -> String {
        self.config.label()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub seed: u64,
    pub fold: usize,
    pub label: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub level: usize,
    /// Names of the evaluated classes at `level`.
    pub class_names: Vec<String>,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

fn evaluate_one(
    dataset: &Dataset,
    tree: &LabelTree,
    folds: (&[usize], &[usize], &[usize]),
    seed: u64,
    fold: usize,
    config: &LossConfig,
    spec: &ExperimentSpec,
    level: usize,
) -> Result<CellResult> {
    let (test, validation, train_idx) = folds;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.images[i]).collect::<Vec<_>>();
    let cfg = TrainConfig {
        seed: model_seed(seed, fold),
        loss: config.clone(),
        ..spec.train.clone()
    };
    let out = train(&pick(train_idx), tree, &cfg)?;
    let digest = crate::sha256_hex(&checkpoint::encode(&out.model, &cfg));

    let selection = select_tau(
        &score_images(&out.model, &pick(validation), tree, level)?,
        &spec.tau_grid,
    )?;
    let scored = score_images(&out.model, &pick(test), tree, level)?;
    let evaluate = |tau: f64| -> Result<Evaluated> {
        let pred = scored.predict(tau);
        let confusion = confusion_matrix(&pred, &scored.truth, scored.classes)?;
        Ok(Evaluated {
            tau,
            metrics: confusion.metrics(),
            confusion,
            per_image_f1: per_image_f1(&scored, tau)?,
        })
    };
    Ok(CellResult {
        seed,
        fold,
        config: config.clone(),
        trace: out.trace,
        checkpoint_digest: digest,
        sweep: selection.sweep,
        at_zero: evaluate(0.0)?,
        at_selected: evaluate(selection.tau)?,
    })
}

/// Worker count from `TREELOSS_WORKERS`, if set.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("TREELOSS_WORKERS")
        .ok()?
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Runs every (seed, fold, configuration) cell. Cells run in parallel but the
/// report is assembled in a fixed order and each cell is deterministic.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let tree = gen_tree(&spec.gen)?;
    let level = spec.level.resolve(&tree)?;
    let partition = tree.level_partition(level)?;
    let class_names = partition
        .nodes
        .iter()
        .map(|&v| tree.node(v).name.clone())
        .collect();

    let datasets: Vec<Dataset> = spec
        .seeds
        .iter()
        .map(|&s| {
            gen_dataset(
                &tree,
                &GenSpec {
                    seed: spec.gen.seed.wrapping_add(s),
                    ..spec.gen.clone()
                },
            )
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::with_capacity(spec.num_cells());
    for (si, &seed) in spec.seeds.iter().enumerate() {
        for fold in 0..spec.gen.folds {
            for (ci, _) in spec.configs.iter().enumerate() {
                jobs.push((si, seed, fold, ci));
            }
        }
    }
    let job = |&(si, seed, fold, ci): &(usize, u64, usize, usize)| {
        let data = &datasets[si];
        let (test, validation, train_idx) = fold_roles(&data.folds, fold);
        let config = &spec.configs[ci];
        log::debug!("cell seed={seed} fold={fold} config={}", config.label());
        evaluate_one(
            data,
            &tree,
            (&test, &validation, &train_idx),
            seed,
            fold,
            config,
            spec,
            level,
        )
        .map_err(|e| CellFailure {
            seed,
            fold,
            label: config.label(),
            message: e.to_string(),
        })
    };
    let results: Vec<std::result::Result<CellResult, CellFailure>> = match workers_from_env() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidTrainConfig(e.to_string()))?
            .install(|| jobs.par_iter().map(job).collect()),
        None => jobs.par_iter().map(job).collect(),
    };
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }
    Ok(ExperimentReport {
        spec: spec.clone(),
        level,
        class_names,
        cells,
        failures,
    })
}

/// Sample mean and standard deviation (`n - 1`; zero for one sample).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Tpr,
    Bacc,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Tpr, Metric::Bacc, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tpr => "TPR",
            Metric::Bacc => "BACC",
            Metric::F1 => "F1",
        }
    }

    pub fn of(self, m: &MetricReport) -> f64 {
        match self {
            Metric::Tpr => m.macro_tpr,
            Metric::Bacc => m.macro_bacc,
            Metric::F1 => m.macro_f1,
        }
    }
}

impl ExperimentReport {
    /// Cells of one configuration, optionally restricted to a seed.
    pub fn cells_of<'a>(
        &'a self,
        label: &'a str,
        seed: Option<u64>,
    ) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells
            .iter()
            .filter(move |c| c.label() == label && seed.is_none_or(|s| c.seed == s))
    }

    /// Fold values of a macro metric at `tau_0` (`selected = false`) or `tau_m`.
    pub fn fold_values(
        &self,
        label: &str,
        seed: Option<u64>,
        metric: Metric,
        selected: bool,
    ) -> Vec<f64> {
        self.cells_of(label, seed)
            .map(|c| metric.of(&if selected { &c.at_selected } else { &c.at_zero }.metrics))
            .collect()
    }

    /// Mean over folds, then over seeds.
    pub fn seed_averaged(&self, label: &str, metric: Metric, selected: bool) -> f64 {
        let per_seed: Vec<f64> = self
            .spec
            .seeds
            .iter()
            .map(|&s| mean_std(&self.fold_values(label, Some(s), metric, selected)).0)
            .collect();
        mean_std(&per_seed).0
    }

    /// Fold-averaged row-normalized confusion at `tau_m`.
    pub fn averaged_confusion(&self, label: &str, seed: Option<u64>) -> Vec<f64> {
        let folds: Vec<ConfusionMatrix> = self
            .cells_of(label, seed)
            .map(|c| c.at_selected.confusion.clone())
            .collect();
        crate::evaluation::average_row_normalized(&folds)
    }

    pub fn summed_confusion(&self, label: &str, seed: Option<u64>) -> ConfusionMatrix {
        let mut total = ConfusionMatrix::new(self.class_names.len());
        for c in self.cells_of(label, seed) {
            total.add(&c.at_selected.confusion);
        }
        total
    }

    /// Share of ID pixels predicted as a different class at `level`, from the
    /// fold-averaged confusion at `tau_m`.
    pub fn cross_class_error(&self, label: &str, seed: Option<u64>) -> f64 {
        crate::evaluation::cross_class_error(
            &self.averaged_confusion(label, seed),
            self.class_names.len(),
        )
    }

    /// Per-image F1 at `tau_m` over every test image of a seed (or of all seeds).
    pub fn per_image_scores(&self, label: &str, seed: Option<u64>) -> Vec<f64> {
        self.cells_of(label, seed)
            .flat_map(|c| c.at_selected.per_image_f1.iter().copied())
            .collect()
    }
}
