//! Synthetic hierarchy-correlated spectral datasets.
//!
//! Each leaf class gets a mean spectrum built from offsets shared along its
//! branch (`base + top + mid + leaf`), so classes that are close in the tree
//! are also close spectrally. Images are Voronoi mosaics of class regions
//! with per-pixel Gaussian noise; annotations are elliptical blobs inside
//! regions, stopping exactly at the requested fraction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    AnnotationField, Dataset, LabeledImage, SpectralImage, OOD_LABEL, UNANNOTATED,
};
use crate::error::{Error, Result};
use crate::hierarchy::{LabelTree, NodeRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub tops: usize,
    pub mids: usize,
    pub leaves: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub images: usize,
    pub folds: usize,
    pub annotated_fraction: f64,
    /// Constant level shared by every class.
    pub base: f64,
    /// Standard deviations of the per-band branch offsets.
    pub top_scale: f64,
    pub mid_scale: f64,
    pub leaf_scale: f64,
    /// Per-pixel, per-band Gaussian noise.
    pub noise: f64,
    /// Voronoi cells per image.
    pub regions: usize,
    pub blob_radius: (f64, f64),
    /// Leaf labels (1-based) kept out of training annotations.
    pub held_out: Vec<usize>,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            tops: 4,
            mids: 3,
            leaves: 2,
            bands: 16,
            height: 64,
            width: 64,
            images: 40,
            folds: 5,
            annotated_fraction: 0.3,
            base: 1.0,
            top_scale: 0.3,
            mid_scale: 0.15,
            leaf_scale: 0.08,
            noise: 0.25,
            regions: 12,
            blob_radius: (2.0, 6.0),
            held_out: Vec::new(),
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn num_leaves(&self) -> usize {
        self.tops * self.mids * self.leaves
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenSpec(m));
        if self.tops == 0 || self.mids == 0 || self.leaves == 0 {
            return bad("tree counts must be at least 1".into());
        }
        if self.num_leaves() < 2 {
            return bad("the tree needs at least 2 leaves".into());
        }
        if self.bands < 2 {
            return bad(format!("{} bands; at least 2 required", self.bands));
        }
        if self.height == 0 || self.width == 0 || self.images == 0 || self.regions == 0 {
            return bad("image geometry and counts must be at least 1".into());
        }
        if !(self.annotated_fraction > 0.0 && self.annotated_fraction <= 1.0) {
            return bad(format!(
                "annotated fraction {} outside (0, 1]",
                self.annotated_fraction
            ));
        }
        let scales = [
            self.base,
            self.top_scale,
            self.mid_scale,
            self.leaf_scale,
            self.noise,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("spectral scales must be finite and nonnegative".into());
        }
        let (lo, hi) = self.blob_radius;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("blob radius range {lo}..{hi} is invalid"));
        }
        if let Some(&l) = self
            .held_out
            .iter()
            .find(|&&l| l == 0 || l > self.num_leaves())
        {
            return bad(format!(
                "held-out label {l} outside 1..={}",
                self.num_leaves()
            ));
        }
        if self.held_out.len() >= self.num_leaves() {
            return bad("at least one leaf must stay in distribution".into());
        }
        Ok(())
    }
}

/// Balanced three-level tree. Ids are breadth-first from the root (`0`);
/// leaf names look like `t1.m2.l1`. Edge weights are left unassigned.
pub fn gen_tree(spec: &GenSpec) -> Result<LabelTree> {
    spec.validate()?;
    let mut records = vec![NodeRecord {
        id: 0,
        name: "root".into(),
        parent: None,
        edge_weight: None,
    }];
    let mut next = 1u64;
    let mut push = |records: &mut Vec<NodeRecord>, name: String, parent: u64| {
        let id = next;
        next += 1;
        records.push(NodeRecord {
            id,
            name,
            parent: Some(parent),
            edge_weight: None,
        });
        id
    };
    let tops: Vec<(u64, String)> = (1..=spec.tops)
        .map(|t| {
            let name = format!("t{t}");
            (push(&mut records, name.clone(), 0), name)
        })
        .collect();
    let mut mids = Vec::new();
    for (id, name) in &tops {
        for m in 1..=spec.mids {
            let child = format!("{name}.m{m}");
            mids.push((push(&mut records, child.clone(), *id), child));
        }
    }
    for (id, name) in &mids {
        for l in 1..=spec.leaves {
            push(&mut records, format!("{name}.l{l}"), *id);
        }
    }
    LabelTree::from_records(records)
}

/// Class mean spectra in leaf-slot order (row-major `C x B`).
pub fn class_means(spec: &GenSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = spec.bands;
    let draw = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        let normal = Normal::new(0.0, scale.max(f64::MIN_POSITIVE)).expect("valid scale");
        (0..b)
            .map(|_| {
                if scale == 0.0 {
                    0.0
                } else {
                    normal.sample(rng)
                }
            })
            .collect()
    };
    let mut means = Vec::with_capacity(spec.num_leaves() * b);
    let tops: Vec<Vec<f64>> = (0..spec.tops)
        .map(|_| draw(&mut rng, spec.top_scale))
        .collect();
    let mids: Vec<Vec<f64>> = (0..spec.tops * spec.mids)
        .map(|_| draw(&mut rng, spec.mid_scale))
        .collect();
    for slot in 0..spec.num_leaves() {
        let leaf = draw(&mut rng, spec.leaf_scale);
        let mid = &mids[slot / spec.leaves];
        let top = &tops[slot / (spec.leaves * spec.mids)];
        means.extend((0..b).map(|k| (spec.base + top[k] + mid[k] + leaf[k]).max(0.0)));
    }
    means
}

/// Generates `spec.images` images of `tree` (usually [`gen_tree`]'s output)
/// and a cross-validation split.
pub fn gen_dataset(tree: &LabelTree, spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    if tree.num_leaves() != spec.num_leaves() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_leaves(),
            actual: tree.num_leaves(),
        });
    }
    let means = class_means(spec);
    let images = (0..spec.images)
        .map(|i| gen_image(spec, &means, i))
        .collect::<Result<Vec<_>>>()?;
    let folds = split(spec.images, spec.folds, spec.seed)?;
    Ok(Dataset {
        tree: tree.clone(),
        images,
        folds,
    })
}

fn gen_image(spec: &GenSpec, means: &[f64], index: usize) -> Result<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let (h, w, b) = (spec.height, spec.width, spec.bands);
    let classes = spec.num_leaves();

    let sites: Vec<(f64, f64, usize)> = (0..spec.regions)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0..classes),
            )
        })
        .collect();
    let mut region = vec![0usize; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (s, &(sy, sx, _)) in sites.iter().enumerate() {
                let d = (y - sy).powi(2) + (x - sx).powi(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            region[r * w + c] = best.1;
        }
    }
    let class_of = |px: usize| sites[region[px]].2;

    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut values = Vec::with_capacity(h * w * b);
    for px in 0..h * w {
        let mean = &means[class_of(px) * b..(class_of(px) + 1) * b];
        for &m in mean {
            let n = if spec.noise == 0.0 {
                0.0
            } else {
                normal.sample(&mut rng)
            };
            values.push((m + n).max(0.0) as f32);
        }
    }

    let held = |class: usize| spec.held_out.contains(&(class + 1));
    let eligible = (0..h * w).filter(|&px| !held(class_of(px))).count();
    let target = (spec.annotated_fraction * (h * w) as f64).round().max(1.0) as usize;
    if target > eligible {
        return Err(Error::AnnotationExceedsForeground {
            requested: target,
            available: eligible,
        });
    }

    let mut labels = vec![UNANNOTATED; h * w];
    let mut eval = vec![UNANNOTATED; h * w];
    let mut count = 0;
    let (rmin, rmax) = spec.blob_radius;
    let attempts = 50 * (target + spec.regions);
    for _ in 0..attempts {
        if count == target {
            break;
        }
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        let site = region[cy * w + cx];
        let (ry, rx) = (rng.random_range(rmin..=rmax), rng.random_range(rmin..=rmax));
        let out = held(sites[site].2);
        let (r0, r1) = (
            (cy as f64 - ry).floor().max(0.0) as usize,
            ((cy as f64 + ry).ceil() as usize).min(h - 1),
        );
        let (c0, c1) = (
            (cx as f64 - rx).floor().max(0.0) as usize,
            ((cx as f64 + rx).ceil() as usize).min(w - 1),
        );
        'blob: for r in r0..=r1 {
            for c in c0..=c1 {
                let px = r * w + c;
                let inside = ((r as f64 - cy as f64) / ry).powi(2)
                    + ((c as f64 - cx as f64) / rx).powi(2)
                    <= 1.0;
                if !inside || region[px] != site || eval[px] != UNANNOTATED {
                    continue;
                }
                if out {
                    eval[px] = OOD_LABEL;
                } else {
                    if count == target {
                        break 'blob;
                    }
                    let label = (sites[site].2 + 1) as i32;
                    labels[px] = label;
                    eval[px] = label;
                    count += 1;
                }
            }
        }
    }
    if count < target {
        // Blob placement saturated; top up from the remaining eligible pixels.
        let mut rest: Vec<usize> = (0..h * w)
            .filter(|&px| eval[px] == UNANNOTATED && !held(class_of(px)))
            .collect();
        rest.shuffle(&mut rng);
        for px in rest.into_iter().take(target - count) {
            let label = (class_of(px) + 1) as i32;
            labels[px] = label;
            eval[px] = label;
        }
    }

    let cube = SpectralImage {
        height: h,
        width: w,
        bands: b,
        values,
    };
    let eval_labels = (!spec.held_out.is_empty()).then_some(AnnotationField {
        height: h,
        width: w,
        labels: eval,
    });
    Ok(LabeledImage {
        cube,
        labels: AnnotationField {
            height: h,
            width: w,
            labels,
        },
        eval_labels,
    })
}

/// Image-disjoint folds: a seeded shuffle dealt round-robin, each fold sorted.
pub fn split(images: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > images {
        return Err(Error::InvalidSplit { images, folds });
    }
    let mut order: Vec<usize> = (0..images).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5eed);
    order.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (i, img) in order.into_iter().enumerate() {
        out[i % folds].push(img);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}
