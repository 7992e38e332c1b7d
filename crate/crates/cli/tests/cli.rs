use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn treeloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeloss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = treeloss(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset: 2x2x2 tree, 6 images of 16x16, 3 folds.
fn small_data(dir: &Path, seed: &str) {
    ok(&[
        "gen-data",
        "--tops",
        "2",
        "--mids",
        "2",
        "--leaves",
        "2",
        "--height",
        "16",
        "--width",
        "16",
        "--images",
        "6",
        "--folds",
        "3",
        "--seed",
        seed,
        "--out",
        p(dir),
    ]);
}

fn quick_train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--epochs",
        "3",
        "--pixels-per-image",
        "32",
        "--hidden",
        "8",
        "--lr",
        "0.01",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_tree_round_trips() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("tree.json");
    ok(&[
        "gen-tree",
        "--tops",
        "4",
        "--mids",
        "3",
        "--leaves",
        "2",
        "--out",
        p(&out),
    ]);
    let tree = treeloss::LabelTree::parse(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(
        (tree.num_leaves(), tree.depth(), tree.num_nodes()),
        (24, 3, 41)
    );
    assert!(tmp.path().join("tree.json.manifest.json").exists());
}

#[test]
fn missing_out_is_usage_error() {
    let out = treeloss(&["gen-tree", "--tops", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = treeloss(&["gen-data", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_data(&a, "7");
    small_data(&b, "7");
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut compared = 0;
    for name in names {
        if name == "run_manifest.json" {
            continue;
        }
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
        compared += 1;
    }
    assert_eq!(compared, 1 + 2 * 6 + 1);
    let data = treeloss::dataset::read_dataset(&a).unwrap();
    assert_eq!(data.images.len(), 6);
}

#[test]
fn manifest_declares_every_output() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "1");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "gen-data");
    let declared: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap().to_string())
        .collect();
    for entry in fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() != "run_manifest.json" {
            assert!(
                declared.contains(&path.display().to_string()),
                "undeclared {path:?}"
            );
        }
    }
    assert!(m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn train_defaults_match_reference_hyperparameters() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "2");
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--epochs",
        "1",
        "--pixels-per-image",
        "8",
        "--out",
        p(&out),
    ]);
    let bytes = fs::read(out.join("model.ckpt")).unwrap();
    let (_, header) = treeloss::trainer::checkpoint::decode(&bytes).unwrap();
    let cfg = header.config;
    assert_eq!((cfg.lr, cfg.batch_size, cfg.lr_gamma), (1e-4, 5, 0.999));
    assert_eq!((cfg.adam_beta1, cfg.adam_beta2), (0.9, 0.999));
    assert_eq!(treeloss::TrainConfig::default().epochs, 50);
}

#[test]
fn tce_leaf_trace_equals_ce_trace() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "3");
    let (ce, tce) = (tmp.path().join("ce"), tmp.path().join("tce"));
    quick_train(&data, &ce, &["--loss", "ce"]);
    quick_train(&data, &tce, &["--loss", "tce", "--scheme", "leaf"]);
    assert_eq!(
        fs::read(ce.join("trace.csv")).unwrap(),
        fs::read(tce.join("trace.csv")).unwrap()
    );
}

#[test]
fn zero_epochs_keeps_initialization() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "4");
    let out = tmp.path().join("run");
    quick_train(&data, &out, &["--epochs", "0", "--seed", "9"]);
    let (model, header) =
        treeloss::trainer::checkpoint::decode(&fs::read(out.join("model.ckpt")).unwrap()).unwrap();
    let (init, _) = treeloss::trainer::init_model(model.inputs(), model.outputs(), &header.config);
    assert_eq!(model, init);
}

#[test]
fn unused_scheme_warns() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "5");
    let out = tmp.path().join("run");
    let res = treeloss(&[
        "train",
        "--data",
        p(&data),
        "--loss",
        "ce",
        "--scheme",
        "hier",
        "--epochs",
        "1",
        "--pixels-per-image",
        "8",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("unused"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "6");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 2, "lr": 0.5, "pixels_per_image": 8, "loss": {"kind": "tree_ce", "scheme": "equal"}}"#)
        .unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--lr",
        "0.001",
        "--out",
        p(&out),
    ]);
    let (_, header) =
        treeloss::trainer::checkpoint::decode(&fs::read(out.join("model.ckpt")).unwrap()).unwrap();
    assert_eq!(
        (
            header.config.epochs,
            header.config.lr,
            header.config.pixels_per_image
        ),
        (2, 0.001, 8)
    );
    assert_eq!(header.config.loss.label(), "tce-equal");
}

#[test]
fn eval_tau_zero_flags_nothing() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "8");
    let run = tmp.path().join("run");
    quick_train(&data, &run, &["--folds", "1,2"]);
    let ckpt = run.join("model.ckpt");
    let out = tmp.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--folds",
        "0",
        "--tau",
        "0",
        "--out",
        p(&out),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ood_pixels_tau0"], 0);
    assert_eq!(summary["ood_pixels_taum"], 0);
    let metrics = fs::read_to_string(out.join("metrics_taum.csv")).unwrap();
    assert!(metrics.starts_with("class,level,tau,TPR,BACC,F1\nt1,2,0.000000,"));
    let confusion = fs::read_to_string(out.join("confusion_taum.csv")).unwrap();
    assert!(confusion.starts_with("truth,OOD,t1,t2\nOOD,0,0,0\n"));

    let out2 = tmp.path().join("eval2");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--folds",
        "0,1",
        "--val-folds",
        "2",
        "--out",
        p(&out2),
    ]);
    assert!(out2.join("confusion_taum_fold_average.csv").exists());
    let sweep = fs::read_to_string(out2.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 102);
}

#[test]
fn eval_missing_checkpoint_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "8");
    let missing = tmp.path().join("nope.ckpt");
    let out = treeloss(&[
        "eval",
        "--checkpoint",
        p(&missing),
        "--data",
        p(&data),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_level_out_of_range_fails() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "8");
    let run = tmp.path().join("run");
    quick_train(&data, &run, &["--epochs", "0"]);
    let out = treeloss(&[
        "eval",
        "--checkpoint",
        p(&run.join("model.ckpt")),
        "--data",
        p(&data),
        "--level",
        "5",
        "--out",
        p(&tmp.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dump_distance_and_wasserstein() {
    let tmp = TempDir::new().unwrap();
    let tree = tmp.path().join("tree.json");
    ok(&[
        "gen-tree",
        "--tops",
        "2",
        "--mids",
        "1",
        "--leaves",
        "1",
        "--out",
        p(&tree),
    ]);
    let out = ok(&["dump-distance", "--tree", p(&tree), "--scheme", "equal"]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "leaf,t1.m1.l1,t2.m1.l1\nt1.m1.l1,0,6\nt2.m1.l1,6,0\n"
    );
    let unweighted = treeloss(&["dump-distance", "--tree", p(&tree)]);
    assert_eq!(unweighted.status.code(), Some(2));

    let out = ok(&[
        "wasserstein",
        "--tree",
        p(&tree),
        "--scheme",
        "equal",
        "--p",
        "0.25,0.75",
        "--target",
        "0",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["lp", "tree", "crisp"] {
        assert!((v[key].as_f64().unwrap() - 4.5).abs() < 1e-12, "{key}: {v}");
    }
}

#[test]
fn experiment_counts_cells_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{
          "gen": {"tops": 2, "mids": 2, "leaves": 2, "height": 12, "width": 12, "images": 6, "folds": 3},
          "seeds": [0],
          "train": {"epochs": 2, "pixels_per_image": 16, "hidden": [8], "lr": 0.01},
          "configs": [
            {"kind": "cross_entropy"},
            {"kind": "tree_ce", "scheme": "hierarchical"},
            {"kind": "wasserstein_ce", "scheme": "leaf_only"},
            {"kind": "wasserstein_ce", "scheme": "hierarchical"}
          ],
          "comparisons": [["wce-hier", "wce-leaf"]]
        }"#,
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["experiment", "--spec", p(&spec), "--out", p(&a)]);
    ok(&["experiment", "--spec", p(&spec), "--out", p(&b)]);
    let cells = fs::read_to_string(a.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 4 * 3);
    for name in [
        "table.csv",
        "ttest.csv",
        "cells.csv",
        "cross_error.csv",
        "confusion_wce-hier.csv",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,loss,scheme,level,metric,tau0_mean,tau0_std,taum_mean,taum_std"
    );
    assert!(lines.next().unwrap().starts_with("0,ce,none,2,TPR,"));
    assert_eq!(table.lines().count(), 1 + 2 * 4 * 3);
    let ttest = fs::read_to_string(a.join("ttest.csv")).unwrap();
    assert!(ttest.starts_with("seed,a,b,n,mean_a,mean_b,t,df,p,degenerate\n0,wce-hier,wce-leaf,6,"));
}
