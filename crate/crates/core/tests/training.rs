use treeloss::datagen::{gen_dataset, gen_tree, GenSpec};
use treeloss::dataset::{Dataset, LabeledImage};
use treeloss::evaluation::score_images;
use treeloss::trainer::{init_model, train};
use treeloss::{EdgeWeightScheme, LossConfig, LossKind, TrainConfig};

fn data(spec: &GenSpec) -> Dataset {
    gen_dataset(&gen_tree(spec).unwrap(), spec).unwrap()
}

fn small_spec() -> GenSpec {
    GenSpec {
        tops: 2,
        mids: 2,
        leaves: 2,
        height: 16,
        width: 16,
        images: 6,
        folds: 3,
        ..GenSpec::default()
    }
}

fn quick(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        lr: 1e-3,
        pixels_per_image: 32,
        hidden: vec![8],
        loss,
        ..TrainConfig::default()
    }
}

fn refs(d: &Dataset) -> Vec<&LabeledImage> {
    d.images.iter().collect()
}

#[test]
fn learns_a_separable_problem() {
    let spec = GenSpec {
        tops: 2,
        mids: 1,
        leaves: 1,
        noise: 0.0,
        height: 16,
        width: 16,
        images: 4,
        folds: 2,
        ..GenSpec::default()
    };
    let d = data(&spec);
    let cfg = TrainConfig {
        epochs: 60,
        lr: 1e-2,
        pixels_per_image: 128,
        hidden: vec![16],
        ..TrainConfig::default()
    };
    let out = train(&refs(&d), &d.tree, &cfg).unwrap();
    let scored = score_images(&out.model, &refs(&d), &d.tree, 0).unwrap();
    let pred = scored.predict(0.0);
    let correct = pred
        .iter()
        .zip(&scored.truth)
        .filter(|(p, t)| p == t)
        .count();
    let accuracy = correct as f64 / pred.len() as f64;
    assert!(accuracy >= 0.99, "accuracy {accuracy}");
    assert!(out.trace.last().unwrap() < &out.trace[0]);
}

#[test]
fn zero_learning_rate_keeps_the_model() {
    let d = data(&small_spec());
    let cfg = TrainConfig {
        lr: 0.0,
        pixels_per_image: 10_000,
        ..quick(LossConfig::default())
    };
    let out = train(&refs(&d), &d.tree, &cfg).unwrap();
    let (init, _) = init_model(d.images[0].cube.bands, d.tree.num_leaves(), &cfg);
    assert_eq!(out.model.params(), init.params());
    // Every epoch sees every annotated pixel, so only summation order varies.
    for v in &out.trace {
        assert!(
            (v - out.trace[0]).abs() <= 1e-12 * out.trace[0],
            "{:?}",
            out.trace
        );
    }
}

#[test]
fn training_is_deterministic() {
    let d = data(&small_spec());
    let cfg = quick(LossConfig::new(
        LossKind::WassersteinCe,
        EdgeWeightScheme::Hierarchical,
    ));
    let a = train(&refs(&d), &d.tree, &cfg).unwrap();
    let b = train(&refs(&d), &d.tree, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.trace, b.trace);
    let other = train(&refs(&d), &d.tree, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model.params(), other.model.params());
}

#[test]
fn leaf_only_tree_ce_trains_like_ce() {
    let d = data(&small_spec());
    let ce = train(&refs(&d), &d.tree, &quick(LossConfig::default())).unwrap();
    let tce = train(
        &refs(&d),
        &d.tree,
        &quick(LossConfig::new(
            LossKind::TreeCe,
            EdgeWeightScheme::LeafOnly,
        )),
    )
    .unwrap();
    for (a, b) in ce.trace.iter().zip(&tce.trace) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn only_annotated_pixels_reach_the_gradient() {
    let d = data(&small_spec());
    let out = train(&refs(&d), &d.tree, &quick(LossConfig::default())).unwrap();
    assert_eq!(out.stats.unannotated_in_gradient, 0);
    let annotated: usize = d
        .images
        .iter()
        .map(|im| im.labels.annotated_count().min(32))
        .sum();
    assert_eq!(out.stats.pixels_seen, 5 * annotated as u64);
    assert_eq!(out.stats.steps, 5 * 2);
}

#[test]
fn unannotated_pixels_do_not_matter() {
    let d = data(&small_spec());
    let mut altered = d.clone();
    for image in &mut altered.images {
        for (i, v) in image.cube.values.iter_mut().enumerate() {
            let pixel = i / image.cube.bands;
            if image.labels.labels[pixel] == treeloss::dataset::UNANNOTATED {
                *v = 7.5;
            }
        }
    }
    let cfg = quick(LossConfig::new(LossKind::TreeCe, EdgeWeightScheme::Equal));
    let a = train(&refs(&d), &d.tree, &cfg).unwrap();
    let b = train(&refs(&altered), &altered.tree, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn rejects_data_without_annotations() {
    let mut d = data(&small_spec());
    for image in &mut d.images {
        image
            .labels
            .labels
            .iter_mut()
            .for_each(|l| *l = treeloss::dataset::UNANNOTATED);
    }
    assert!(train(&refs(&d), &d.tree, &quick(LossConfig::default())).is_err());
}
