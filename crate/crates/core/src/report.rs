//! CSV renderings of evaluation and experiment results.
//!
//! Column orders are fixed; floats are written with six decimals.

use std::fmt::Write;

use crate::evaluation::{paired_t_test, ConfusionMatrix, MetricReport, SweepPoint};
use crate::experiment::{mean_std, ExperimentReport, Metric};
use crate::losses::LossConfig;

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn loss_scheme(cfg: &LossConfig) -> (&'static str, &'static str) {
    let scheme = if cfg.kind.uses_scheme() {
        cfg.scheme.short_name()
    } else {
        "none"
    };
    (cfg.kind.short_name(), scheme)
}

/// `class,level,tau,TPR,BACC,F1`, one row per class plus a `macro` row.
/// Classes without support are written with empty metric fields.
pub fn metrics_csv(report: &MetricReport, names: &[String], level: usize, tau: f64) -> String {
    let mut out = String::from("class,level,tau,TPR,BACC,F1\n");
    for m in &report.per_class {
        let name = &names[m.class - 1];
        if m.support == 0 {
            writeln!(out, "{name},{level},{},,,", f(tau)).unwrap();
        } else {
            writeln!(
                out,
                "{name},{level},{},{},{},{}",
                f(tau),
                f(m.tpr),
                f(m.bacc),
                f(m.f1)
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        "macro,{level},{},{},{},{}",
        f(tau),
        f(report.macro_tpr),
        f(report.macro_bacc),
        f(report.macro_f1)
    )
    .unwrap();
    out
}

fn matrix_csv(dim: usize, names: &[String], cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::from("truth");
    for name in std::iter::once("OOD").chain(names.iter().map(String::as_str)) {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for r in 0..dim {
        out.push_str(if r == 0 { "OOD" } else { &names[r - 1] });
        for c in 0..dim {
            write!(out, ",{}", cell(r, c)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Raw confusion counts; rows are truth, the first row/column is OOD.
pub fn confusion_counts_csv(cm: &ConfusionMatrix, names: &[String]) -> String {
    matrix_csv(cm.classes + 1, names, |r, c| cm.get(r, c).to_string())
}

/// Row-major `(C + 1)^2` normalized confusion.
pub fn confusion_normalized_csv(values: &[f64], names: &[String]) -> String {
    let d = names.len() + 1;
    matrix_csv(d, names, |r, c| f(values[r * d + c]))
}

pub fn sweep_csv(sweep: &[SweepPoint]) -> String {
    let mut out = String::from("tau,ood_fraction,TPR,BACC,F1\n");
    for p in sweep {
        writeln!(
            out,
            "{},{},{},{},{}",
            f(p.tau),
            f(p.ood_fraction),
            f(p.macro_tpr),
            f(p.macro_bacc),
            f(p.macro_f1)
        )
        .unwrap();
    }
    out
}

/// `epoch,loss` with full precision, so traces can be compared bitwise.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, v) in trace.iter().enumerate() {
        writeln!(out, "{e},{v:?}").unwrap();
    }
    out
}

/// Table of macro metrics, mean and std over folds per seed, then over every
/// (seed, fold) cell in the `all` rows.
pub fn table_csv(report: &ExperimentReport) -> String {
    let mut out =
        String::from("seed,loss,scheme,level,metric,tau0_mean,tau0_std,taum_mean,taum_std\n");
    let seeds: Vec<Option<u64>> = report
        .spec
        .seeds
        .iter()
        .map(|&s| Some(s))
        .chain([None])
        .collect();
    for seed in seeds {
        for cfg in &report.spec.configs {
            let label = cfg.label();
            let (loss, scheme) = loss_scheme(cfg);
            for metric in Metric::ALL {
                let (m0, s0) = mean_std(&report.fold_values(&label, seed, metric, false));
                let (mm, sm) = mean_std(&report.fold_values(&label, seed, metric, true));
                let seed = seed.map_or("all".to_string(), |s| s.to_string());
                writeln!(
                    out,
                    "{seed},{loss},{scheme},{},{},{},{},{},{}",
                    report.level,
                    metric.name(),
                    f(m0),
                    f(s0),
                    f(mm),
                    f(sm)
                )
                .unwrap();
            }
        }
    }
    out
}

/// Paired t-tests on per-image F1 at the selected threshold.
pub fn ttest_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,a,b,n,mean_a,mean_b,t,df,p,degenerate\n");
    let seeds: Vec<Option<u64>> = report
        .spec
        .seeds
        .iter()
        .map(|&s| Some(s))
        .chain([None])
        .collect();
    for (a, b) in &report.spec.comparisons {
        for &seed in &seeds {
            let xa = report.per_image_scores(a, seed);
            let xb = report.per_image_scores(b, seed);
            let seed = seed.map_or("all".to_string(), |s| s.to_string());
            match paired_t_test(&xa, &xb) {
                Ok(t) => writeln!(
                    out,
                    "{seed},{a},{b},{},{},{},{},{},{},{}",
                    xa.len(),
                    f(mean_std(&xa).0),
                    f(mean_std(&xb).0),
                    f(t.t),
                    t.df,
                    f(t.p),
                    t.degenerate
                )
                .unwrap(),
                Err(e) => writeln!(out, "{seed},{a},{b},{},,,,,,error: {e}", xa.len()).unwrap(),
            }
        }
    }
    out
}

/// One row per cell: thresholds, headline F1 values and the checkpoint digest.
pub fn cells_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,fold,loss,scheme,tau_m,F1_tau0,F1_taum,checkpoint_sha256\n");
    for c in &report.cells {
        let (loss, scheme) = loss_scheme(&c.config);
        writeln!(
            out,
            "{},{},{loss},{scheme},{},{},{},{}",
            c.seed,
            c.fold,
            f(c.at_selected.tau),
            f(c.at_zero.metrics.macro_f1),
            f(c.at_selected.metrics.macro_f1),
            c.checkpoint_digest
        )
        .unwrap();
    }
    for fail in &report.failures {
        let message = fail.message.replace(',', ";");
        writeln!(
            out,
            "{},{},{},failed,,,,{message}",
            fail.seed, fail.fold, fail.label
        )
        .unwrap();
    }
    out
}

/// Cross-class error of the fold-averaged confusion, per seed and overall.
pub fn cross_error_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,loss,scheme,cross_class_error\n");
    let seeds: Vec<Option<u64>> = report
        .spec
        .seeds
        .iter()
        .map(|&s| Some(s))
        .chain([None])
        .collect();
    for seed in seeds {
        for cfg in &report.spec.configs {
            let (loss, scheme) = loss_scheme(cfg);
            let e = report.cross_class_error(&cfg.label(), seed);
            let seed = seed.map_or("all".to_string(), |s| s.to_string());
            writeln!(out, "{seed},{loss},{scheme},{}", f(e)).unwrap();
        }
    }
    out
}
