//! In-memory spectral datasets and their on-disk layout.
//!
//! A dataset directory holds `manifest.json`, `tree.json` and, per image, a
//! cube file (little-endian `f32`, `H x W x B` row-major) and a label file
//! (little-endian `i32`, `H x W`). Label `-1` marks unannotated pixels,
//! `1..=C` are leaf classes in leaf-slot order plus one, and `0` is the OOD
//! truth code, which only appears in evaluation labels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelTree;

pub const UNANNOTATED: i32 = -1;
pub const OOD_LABEL: i32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Row-major `H x W x B`.
    pub values: Vec<f32>,
}

impl SpectralImage {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.values[index * self.bands..(index + 1) * self.bands]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationField {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i32>,
}

impl AnnotationField {
    pub fn unannotated(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![UNANNOTATED; height * width],
        }
    }

    pub fn annotated_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNANNOTATED).count()
    }

    pub fn annotated_fraction(&self) -> f64 {
        self.annotated_count() as f64 / self.labels.len() as f64
    }

    /// Pixel index and label of every annotated pixel.
    pub fn annotated(&self) -> impl Iterator<Item = (usize, i32)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != UNANNOTATED)
            .map(|(i, &l)| (i, l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub cube: SpectralImage,
    /// Training annotations: never contain the OOD code.
    pub labels: AnnotationField,
    /// Evaluation annotations; may carry `0` on held-out classes.
    pub eval_labels: Option<AnnotationField>,
}

impl LabeledImage {
    pub fn evaluation_labels(&self) -> &AnnotationField {
        self.eval_labels.as_ref().unwrap_or(&self.labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tree: LabelTree,
    pub images: Vec<LabeledImage>,
    /// Image indices of each cross-validation fold.
    pub folds: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub cube: String,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_labels: Option<String>,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ImageEntry>,
    pub tree: String,
    pub splits: Vec<Vec<usize>>,
}

/// Writes `dataset` under `dir` and returns the paths written, manifest last.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let tree_path = dir.join("tree.json");
    fs::write(&tree_path, dataset.tree.to_json())?;
    written.push(tree_path);

    let mut entries = Vec::with_capacity(dataset.images.len());
    for (i, image) in dataset.images.iter().enumerate() {
        let cube = format!("image_{i:03}.cube.bin");
        let labels = format!("image_{i:03}.labels.bin");
        fs::write(dir.join(&cube), f32_bytes(&image.cube.values))?;
        fs::write(dir.join(&labels), i32_bytes(&image.labels.labels))?;
        written.push(dir.join(&cube));
        written.push(dir.join(&labels));
        let eval_labels = match &image.eval_labels {
            Some(field) => {
                let name = format!("image_{i:03}.eval_labels.bin");
                fs::write(dir.join(&name), i32_bytes(&field.labels))?;
                written.push(dir.join(&name));
                Some(name)
            }
            None => None,
        };
        entries.push(ImageEntry {
            cube,
            labels,
            eval_labels,
            height: image.cube.height,
            width: image.cube.width,
            bands: image.cube.bands,
        });
    }
    let manifest = Manifest {
        images: entries,
        tree: "tree.json".into(),
        splits: dataset.folds.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(manifest_path);
    Ok(written)
}

/// Reads a dataset from its manifest file or from the directory holding it.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let tree = LabelTree::parse(&fs::read_to_string(dir.join(&manifest.tree))?)?;
    let classes = tree.num_leaves() as i32;

    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let pixels = entry.height * entry.width;
        let values = read_f32(&dir.join(&entry.cube), pixels * entry.bands)?;
        let labels = read_labels(&dir.join(&entry.labels), pixels, classes, false)?;
        let eval_labels = entry
            .eval_labels
            .as_ref()
            .map(|name| read_labels(&dir.join(name), pixels, classes, true))
            .transpose()?;
        images.push(LabeledImage {
            cube: SpectralImage {
                height: entry.height,
                width: entry.width,
                bands: entry.bands,
                values,
            },
            labels: AnnotationField {
                height: entry.height,
                width: entry.width,
                labels,
            },
            eval_labels: eval_labels.map(|labels| AnnotationField {
                height: entry.height,
                width: entry.width,
                labels,
            }),
        });
    }
    for fold in &manifest.splits {
        if let Some(&bad) = fold.iter().find(|&&i| i >= images.len()) {
            return Err(Error::Dataset(format!(
                "split references missing image {bad}"
            )));
        }
    }
    Ok(Dataset {
        tree,
        images,
        folds: manifest.splits,
    })
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn i32_bytes(values: &[i32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Dataset(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn read_labels(path: &Path, expected: usize, classes: i32, allow_ood: bool) -> Result<Vec<i32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Dataset(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    let labels: Vec<i32> = bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let lowest = if allow_ood { OOD_LABEL } else { 1 };
    if let Some(&bad) = labels
        .iter()
        .find(|&&l| l != UNANNOTATED && !(lowest..=classes).contains(&l))
    {
        return Err(Error::Dataset(format!(
            "{}: label {bad} out of range",
            path.display()
        )));
    }
    Ok(labels)
}
