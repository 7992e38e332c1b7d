//! Per-pixel spectral classifier training.
//!
//! Each step draws `batch_size` images, samples up to `pixels_per_image`
//! annotated pixels from each, and takes one Adam step on the mean loss over
//! those pixels. The learning rate decays once per epoch by `lr_gamma`.
//! Unannotated pixels never enter a gradient.

mod adam;
pub mod checkpoint;
mod mlp;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, OptimizerState};
pub use mlp::{BatchCache, Mlp};

use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::hierarchy::LabelTree;
use crate::losses::{pairwise_sum, LossConfig, PixelBatch, SemanticLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_gamma: f64,
    /// Images per step.
    pub batch_size: usize,
    /// Annotated pixels sampled from each image per step.
    pub pixels_per_image: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            lr_gamma: 0.999,
            batch_size: 5,
            pixels_per_image: 1024,
            epochs: 50,
            seed: 0,
            hidden: vec![64, 64],
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.lr) {
            return Err(Error::InvalidTrainConfig(format!(
                "lr {} outside [0, 1]",
                self.lr
            )));
        }
        if !(unit(self.adam_beta1)
            && self.adam_beta1 < 1.0
            && unit(self.adam_beta2)
            && self.adam_beta2 < 1.0)
        {
            return Err(Error::InvalidTrainConfig(
                "Adam betas must lie in [0, 1)".into(),
            ));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::InvalidTrainConfig(format!(
                "lr_gamma {} outside (0, 1]",
                self.lr_gamma
            )));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidTrainConfig(
                "adam_epsilon must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.pixels_per_image == 0 {
            return Err(Error::InvalidTrainConfig(
                "batch_size and pixels_per_image must be at least 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidTrainConfig(
                "hidden layers must be non-empty".into(),
            ));
        }
        self.loss.validate()
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi(epoch as i32)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Scales a pixel to unit ℓ¹ norm in place. All-zero pixels are left as-is
/// and reported with `false`.
pub fn l1_normalize(pixel: &mut [f64]) -> bool {
    let norm: f64 = pixel.iter().map(|v| v.abs()).sum();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    pixel.iter_mut().for_each(|v| *v /= norm);
    true
}

/// ℓ¹-normalized features of the given pixels of one image, row-major.
pub fn pixel_features(image: &LabeledImage, pixels: &[usize], degenerate: &mut usize) -> Vec<f64> {
    let bands = image.cube.bands;
    let mut out = Vec::with_capacity(pixels.len() * bands);
    for &i in pixels {
        let start = out.len();
        out.extend(image.cube.pixel(i).iter().map(|&v| f64::from(v)));
        if !l1_normalize(&mut out[start..]) {
            *degenerate += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub steps: u64,
    pub pixels_seen: u64,
    /// Unannotated pixels that reached a gradient computation; always 0.
    pub unannotated_in_gradient: u64,
    /// Pixels with an all-zero spectrum.
    pub degenerate_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Mlp,
    /// Pixel-weighted mean training loss of each epoch.
    pub trace: Vec<f64>,
    pub stats: TrainStats,
}

struct ImagePixels {
    features: Vec<f64>,
    targets: Vec<usize>,
}

/// Fresh model for `cfg`, seeded from `cfg.seed`.
pub fn init_model(bands: usize, classes: usize, cfg: &TrainConfig) -> (Mlp, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![bands];
    sizes.extend(&cfg.hidden);
    sizes.push(classes);
    (Mlp::new(&sizes, &mut rng), rng)
}

/// Trains a model on the annotated pixels of `images`.
pub fn train(images: &[&LabeledImage], tree: &LabelTree, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let loss = SemanticLoss::new(cfg.loss.clone(), tree)?;
    let classes = tree.num_leaves();
    let bands = images
        .first()
        .map(|im| im.cube.bands)
        .ok_or(Error::NoAnnotatedPixels)?;

    let mut stats = TrainStats::default();
    let mut pool = Vec::new();
    for image in images {
        if image.cube.bands != bands {
            return Err(Error::DimensionMismatch {
                expected: bands,
                actual: image.cube.bands,
            });
        }
        let mut pixels = Vec::new();
        let mut targets = Vec::new();
        for (i, label) in image.labels.annotated() {
            if label < 1 || label as usize > classes {
                return Err(Error::Dataset(format!(
                    "training label {label} outside 1..={classes}"
                )));
            }
            pixels.push(i);
            targets.push(label as usize - 1);
        }
        if !pixels.is_empty() {
            let features = pixel_features(image, &pixels, &mut stats.degenerate_pixels);
            pool.push(ImagePixels { features, targets });
        }
    }
    if pool.is_empty() {
        return Err(Error::NoAnnotatedPixels);
    }

    let (mut model, mut rng) = init_model(bands, classes, cfg);
    let mut state = OptimizerState::new(model.num_params());
    let adam = cfg.adam();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut grad = vec![0.0; model.num_params()];

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut weighted = Vec::new();
        let mut epoch_pixels = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for &img in chunk {
                let data = &pool[img];
                let n = data.targets.len();
                let take = cfg.pixels_per_image.min(n);
                let mut picked = index::sample(&mut rng, n, take).into_vec();
                picked.sort_unstable();
                for p in picked {
                    inputs.extend_from_slice(&data.features[p * bands..(p + 1) * bands]);
                    targets.push(data.targets[p]);
                }
            }
            let batch = targets.len();
            let cache = model.forward_batch(&inputs, batch)?;
            let pixel_batch = PixelBatch {
                classes,
                logits: cache.logits().to_vec(),
                targets,
                mask: vec![true; batch],
            };
            stats.unannotated_in_gradient +=
                pixel_batch.mask.iter().filter(|&&m| !m).count() as u64;
            let out = loss.batch_loss(&pixel_batch)?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward_batch(&cache, &out.grad, &mut grad)?;
            state.step(model.params_mut(), &grad, lr, &adam)?;
            stats.steps += 1;
            stats.pixels_seen += batch as u64;
            weighted.push(out.value * batch as f64);
            epoch_pixels += batch;
        }
        trace.push(pairwise_sum(&weighted) / epoch_pixels as f64);
    }
    Ok(TrainOutput {
        model,
        trace,
        stats,
    })
}
