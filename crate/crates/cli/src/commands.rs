use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use treeloss::datagen::{gen_dataset, gen_tree as generate_tree, GenSpec};
use treeloss::dataset::{read_dataset, write_dataset, Dataset, LabeledImage};
use treeloss::evaluation::{
    average_row_normalized, confusion_matrix, score_images, select_tau, tau_sweep, ScoredPixels,
    OOD,
};
use treeloss::experiment::{self, ExperimentSpec};
use treeloss::trainer::{checkpoint, train as run_training, TrainConfig};
use treeloss::transport::{wasserstein_crisp, wasserstein_lp, wasserstein_tree};
use treeloss::{report, LabelTree, LossKind, OneHot, ProbVector, SemanticLoss};

use crate::manifest::{beside, RunManifest};
use crate::{
    DistanceArgs, EvalArgs, ExperimentArgs, GenDataArgs, GenTreeArgs, SweepArgs, TrainArgs,
    UsageError, WassersteinArgs,
};

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{} does not exist", path.display())).into());
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_tree(path: &Path) -> Result<LabelTree> {
    require(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    LabelTree::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_data(data: &Path, tree: Option<&PathBuf>) -> Result<(Dataset, LabelTree)> {
    require(data)?;
    let dataset =
        read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let tree = match tree {
        Some(p) => read_tree(p)?,
        None => dataset.tree.clone(),
    };
    if tree.num_leaves() != dataset.tree.num_leaves() {
        bail!(
            "tree has {} leaves but the dataset uses {}",
            tree.num_leaves(),
            dataset.tree.num_leaves()
        );
    }
    Ok((dataset, tree))
}

/// Images of the given folds, or every image when `folds` is empty.
fn select_images<'a>(dataset: &'a Dataset, folds: &[usize]) -> Result<Vec<&'a LabeledImage>> {
    if folds.is_empty() {
        return Ok(dataset.images.iter().collect());
    }
    let mut idx = Vec::new();
    for &f in folds {
        let fold = dataset.folds.get(f).ok_or_else(|| {
            UsageError(format!(
                "fold {f} out of range (dataset has {})",
                dataset.folds.len()
            ))
        })?;
        idx.extend(fold.iter().copied());
    }
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| &dataset.images[i]).collect())
}

fn grid(steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(UsageError("--grid-steps must be at least 1".into()).into());
    }
    Ok((0..=steps).map(|i| i as f64 / steps as f64).collect())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_tree(a: GenTreeArgs) -> Result<()> {
    let spec = GenSpec {
        tops: a.tops,
        mids: a.mids,
        leaves: a.leaves,
        ..GenSpec::default()
    };
    let config = json!({ "tops": a.tops, "mids": a.mids, "leaves": a.leaves, "scheme": a.scheme });
    let manifest = RunManifest::begin(
        beside(&a.out),
        "gen-tree",
        config,
        None,
        &[],
        vec![a.out.clone()],
    )?;
    manifest.run(|| {
        let mut tree = generate_tree(&spec)?;
        if let Some(scheme) = &a.scheme {
            tree = tree.assign_weights(scheme)?;
        }
        write(&a.out, tree.to_json())
    })
}

fn resolve_gen_spec(a: &GenDataArgs) -> Result<GenSpec> {
    let mut spec: GenSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => GenSpec::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:expr),*) => { $(if let Some(v) = $flag.clone() { spec.$field = v; })* };
    }
    set!(seed <- a.seed, tops <- a.tops, mids <- a.mids, leaves <- a.leaves, bands <- a.bands,
         height <- a.height, width <- a.width, images <- a.images, folds <- a.folds,
         annotated_fraction <- a.fraction, noise <- a.noise, held_out <- a.held_out);
    Ok(spec)
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = resolve_gen_spec(&a)?;
    let inputs: Vec<&Path> = a.spec.iter().map(PathBuf::as_path).collect();
    let mut outputs = vec![a.out.join("tree.json")];
    for i in 0..spec.images {
        outputs.push(a.out.join(format!("image_{i:03}.cube.bin")));
        outputs.push(a.out.join(format!("image_{i:03}.labels.bin")));
        if !spec.held_out.is_empty() {
            outputs.push(a.out.join(format!("image_{i:03}.eval_labels.bin")));
        }
    }
    outputs.push(a.out.join("manifest.json"));
    let manifest = RunManifest::begin(
        a.out.join("run_manifest.json"),
        "gen-data",
        serde_json::to_value(&spec)?,
        Some(spec.seed),
        &inputs,
        outputs,
    )?;
    manifest.run(|| {
        let tree = generate_tree(&spec)?;
        let data = gen_dataset(&tree, &spec)?;
        write_dataset(&a.out, &data)?;
        Ok(())
    })
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($($field:ident).+ <- $flag:expr),*) => { $(if let Some(v) = $flag.clone() { cfg.$($field).+ = v; })* };
    }
    set!(loss.kind <- a.loss, loss.scheme <- a.scheme, loss.alpha <- a.alpha, loss.beta <- a.beta,
         epochs <- a.epochs, lr <- a.lr, lr_gamma <- a.lr_gamma, batch_size <- a.batch_size,
         pixels_per_image <- a.pixels_per_image, hidden <- a.hidden, seed <- a.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn warn_about_loss(cfg: &TrainConfig, tree: &LabelTree, scheme_given: bool) -> Result<()> {
    if !cfg.loss.kind.uses_scheme() && scheme_given {
        log::warn!(
            "--scheme {} is unused with --loss {}",
            cfg.loss.scheme.short_name(),
            cfg.loss.kind.short_name()
        );
    }
    let loss = SemanticLoss::new(cfg.loss.clone(), tree)?;
    if loss.ground_distance().is_some_and(|m| m.is_zero()) {
        log::warn!("ground distance is identically zero; the Wasserstein term has no effect");
    }
    if cfg.loss.kind == LossKind::WassersteinCe && cfg.loss.alpha == 0.0 && cfg.loss.beta == 0.0 {
        log::warn!("alpha = beta = 0 gives a constant loss");
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    let (dataset, tree) = load_data(&a.data, a.tree.as_ref())?;
    warn_about_loss(&cfg, &tree, a.scheme.is_some())?;
    let ckpt = a.out.join("model.ckpt");
    let trace = a.out.join("trace.csv");
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.tree.iter().map(PathBuf::as_path));
    inputs.extend(a.config.iter().map(PathBuf::as_path));
    let config = json!({ "train": cfg, "folds": a.folds });
    let manifest = RunManifest::begin(
        a.out.join("run_manifest.json"),
        "train",
        config,
        Some(cfg.seed),
        &inputs,
        vec![ckpt.clone(), trace.clone()],
    )?;
    manifest.run(|| {
        let images = select_images(&dataset, &a.folds)?;
        let out = run_training(&images, &tree, &cfg)?;
        log::info!(
            "{} steps, final loss {:?}",
            out.stats.steps,
            out.trace.last()
        );
        if out.stats.degenerate_pixels > 0 {
            log::warn!(
                "{} all-zero pixels left unnormalized",
                out.stats.degenerate_pixels
            );
        }
        write(&ckpt, checkpoint::encode(&out.model, &cfg))?;
        write(&trace, report::trace_csv(&out.trace))
    })
}

fn load_checkpoint(path: &Path) -> Result<(treeloss::Mlp, checkpoint::CheckpointHeader)> {
    require(path)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    checkpoint::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn level_names(tree: &LabelTree, level: usize) -> Result<Vec<String>> {
    let partition = tree.level_partition(level)?;
    Ok(partition
        .nodes
        .iter()
        .map(|&v| tree.node(v).name.clone())
        .collect())
}

fn ood_count(scored: &ScoredPixels, tau: f64) -> usize {
    scored.predict(tau).iter().filter(|&&p| p == OOD).count()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, header) = load_checkpoint(&a.checkpoint)?;
    let (dataset, tree) = load_data(&a.data, a.tree.as_ref())?;
    let level = a.level.resolve(&tree)?;
    let names = level_names(&tree, level)?;
    let grid = grid(a.grid_steps)?;
    if let Some(t) = a.tau.filter(|t| !(0.0..=1.0).contains(t)) {
        return Err(UsageError(format!("--tau {t} outside [0, 1]")).into());
    }

    let files = [
        "metrics_tau0.csv",
        "metrics_taum.csv",
        "confusion_tau0.csv",
        "confusion_taum.csv",
        "confusion_taum_normalized.csv",
        "sweep.csv",
        "summary.json",
    ];
    let mut outputs: Vec<PathBuf> = files.iter().map(|f| a.out.join(f)).collect();
    if a.folds.len() > 1 {
        outputs.push(a.out.join("confusion_taum_fold_average.csv"));
    }
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.data];
    inputs.extend(a.tree.iter().map(PathBuf::as_path));
    let config = json!({
        "level": level, "tau": a.tau, "folds": a.folds, "val_folds": a.val_folds,
        "grid_steps": a.grid_steps, "config_digest": header.config_digest,
    });
    let manifest = RunManifest::begin(
        a.out.join("run_manifest.json"),
        "eval",
        config,
        None,
        &inputs,
        outputs.clone(),
    )?;
    manifest.run(|| {
        let test = select_images(&dataset, &a.folds)?;
        let scored = score_images(&model, &test, &tree, level)?;
        let (tau_m, source) = match a.tau {
            Some(t) => (t, "given"),
            None if !a.val_folds.is_empty() => {
                let val = select_images(&dataset, &a.val_folds)?;
                (
                    select_tau(&score_images(&model, &val, &tree, level)?, &grid)?.tau,
                    "validation",
                )
            }
            None => {
                log::warn!("no --val-folds; selecting tau on the evaluated images");
                (select_tau(&scored, &grid)?.tau, "evaluated")
            }
        };
        for (tau, metrics, confusion) in [(0.0, files[0], files[2]), (tau_m, files[1], files[3])] {
            let cm = confusion_matrix(&scored.predict(tau), &scored.truth, scored.classes)?;
            write(
                &a.out.join(metrics),
                report::metrics_csv(&cm.metrics(), &names, level, tau),
            )?;
            write(
                &a.out.join(confusion),
                report::confusion_counts_csv(&cm, &names),
            )?;
            if tau == tau_m && confusion == files[3] {
                write(
                    &a.out.join(files[4]),
                    report::confusion_normalized_csv(&cm.row_normalized(), &names),
                )?;
            }
        }
        write(
            &a.out.join(files[5]),
            report::sweep_csv(&tau_sweep(&scored, &grid)?),
        )?;
        if a.folds.len() > 1 {
            let per_fold = a
                .folds
                .iter()
                .map(|&f| {
                    let s = score_images(&model, &select_images(&dataset, &[f])?, &tree, level)?;
                    Ok(confusion_matrix(&s.predict(tau_m), &s.truth, s.classes)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let avg = average_row_normalized(&per_fold);
            write(
                &a.out.join("confusion_taum_fold_average.csv"),
                report::confusion_normalized_csv(&avg, &names),
            )?;
        }
        let summary = json!({
            "level": level,
            "classes": names,
            "pixels": scored.len(),
            "tau_m": tau_m,
            "tau_m_source": source,
            "ood_pixels_tau0": ood_count(&scored, 0.0),
            "ood_pixels_taum": ood_count(&scored, tau_m),
        });
        write(
            &a.out.join(files[6]),
            serde_json::to_string_pretty(&summary)? + "\n",
        )
    })
}

pub fn ood_sweep(a: SweepArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let (dataset, tree) = load_data(&a.data, a.tree.as_ref())?;
    let level = a.level.resolve(&tree)?;
    let grid = grid(a.grid_steps)?;
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.data];
    inputs.extend(a.tree.iter().map(PathBuf::as_path));
    let config = json!({ "level": level, "folds": a.folds, "grid_steps": a.grid_steps });
    let manifest = RunManifest::begin(
        beside(&a.out),
        "ood-sweep",
        config,
        None,
        &inputs,
        vec![a.out.clone()],
    )?;
    manifest.run(|| {
        let images = select_images(&dataset, &a.folds)?;
        let scored = score_images(&model, &images, &tree, level)?;
        write(&a.out, report::sweep_csv(&tau_sweep(&scored, &grid)?))
    })
}

fn weighted_tree(path: &Path, scheme: Option<&treeloss::EdgeWeightScheme>) -> Result<LabelTree> {
    let tree = read_tree(path)?;
    match scheme {
        Some(s) => Ok(tree.assign_weights(s)?),
        None if tree.is_weighted() => Ok(tree),
        None => Err(UsageError(format!(
            "{} has no edge weights; pass --scheme",
            path.display()
        ))
        .into()),
    }
}

pub fn dump_distance(a: DistanceArgs) -> Result<()> {
    let tree = weighted_tree(&a.tree, a.scheme.as_ref())?;
    let m = tree.ground_distance()?;
    if m.is_zero() {
        log::warn!("ground distance is identically zero");
    }
    let csv = m.to_csv(&tree.leaf_names());
    match &a.out {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(out) => {
            let config = json!({ "scheme": a.scheme });
            let manifest = RunManifest::begin(
                beside(out),
                "dump-distance",
                config,
                None,
                &[&a.tree],
                vec![out.clone()],
            )?;
            manifest.run(|| write(out, csv))
        }
    }
}

pub fn wasserstein(a: WassersteinArgs) -> Result<()> {
    let tree = weighted_tree(&a.tree, a.scheme.as_ref())?;
    let m = tree.ground_distance()?;
    let p = ProbVector::new(a.p.clone())?;
    let result = match (&a.q, a.target) {
        (Some(q), _) => {
            let q = ProbVector::new(q.clone())?;
            json!({
                "lp": wasserstein_lp(&p, &q, &m)?.cost,
                "tree": wasserstein_tree(&p, &q, &tree)?,
            })
        }
        (None, Some(t)) => {
            let g = OneHot::new(t, p.len())?;
            json!({
                "lp": wasserstein_lp(&p, &g.to_prob(), &m)?.cost,
                "tree": wasserstein_tree(&p, &g.to_prob(), &tree)?,
                "crisp": wasserstein_crisp(&p, g, &m)?,
            })
        }
        (None, None) => return Err(UsageError("pass --q or --target".into()).into()),
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn table_outputs(out: &Path, spec: &ExperimentSpec) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = [
        "spec.json",
        "table.csv",
        "ttest.csv",
        "cells.csv",
        "cross_error.csv",
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    for label in spec.labels() {
        files.push(out.join(format!("confusion_{label}.csv")));
        files.push(out.join(format!("confusion_{label}_counts.csv")));
    }
    files
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seeds) = &a.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(e) = a.epochs {
        spec.train.epochs = e;
    }
    spec.validate()?;
    let inputs: Vec<&Path> = a.spec.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::begin(
        a.out.join("run_manifest.json"),
        "experiment",
        serde_json::to_value(&spec)?,
        None,
        &inputs,
        table_outputs(&a.out, &spec),
    )?;
    let failures = manifest.run(|| {
        let report = experiment::run(&spec)?;
        write(
            &a.out.join("spec.json"),
            serde_json::to_string_pretty(&spec)? + "\n",
        )?;
        write(&a.out.join("table.csv"), report::table_csv(&report))?;
        write(&a.out.join("ttest.csv"), report::ttest_csv(&report))?;
        write(&a.out.join("cells.csv"), report::cells_csv(&report))?;
        write(
            &a.out.join("cross_error.csv"),
            report::cross_error_csv(&report),
        )?;
        for label in spec.labels() {
            let avg = report.averaged_confusion(&label, None);
            write(
                &a.out.join(format!("confusion_{label}.csv")),
                report::confusion_normalized_csv(&avg, &report.class_names),
            )?;
            let sum = report.summed_confusion(&label, None);
            write(
                &a.out.join(format!("confusion_{label}_counts.csv")),
                report::confusion_counts_csv(&sum, &report.class_names),
            )?;
        }
        Ok(report.failures)
    })?;
    if !failures.is_empty() {
        for f in &failures {
            eprintln!(
                "cell seed={} fold={} {} failed: {}",
                f.seed, f.fold, f.label, f.message
            );
        }
        bail!("{} of {} cells failed", failures.len(), spec.num_cells());
    }
    Ok(())
}
