//! Datasets, split manifests, the synthetic generator and PNG folder I/O.

mod folder;
mod split;
mod synthetic;

use crate::augment::RasterImage;
use crate::error::{Error, Result};

pub use folder::{load_png_folder, read_png, write_png};
pub use split::{make_split, Split, SplitFractions, SplitManifest};
pub use synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec, COLOR_TABLE};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<RasterImage>,
    pub labels: Vec<usize>,
    /// Stable per-item identifiers used by split manifests.
    pub ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl ImageDataset {
    pub fn new(images: Vec<RasterImage>, labels: Vec<usize>, ids: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != ids.len() {
            return Err(Error::invalid("dataset images, labels and ids differ in length"));
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().position(|i| i.dims() != first.dims()) {
                return Err(Error::invalid(format!(
                    "item {} has extents {:?}, expected {:?}",
                    ids[bad],
                    images[bad].dims(),
                    first.dims()
                )));
            }
        }
        let k = class_names.len();
        if let Some(bad) = labels.iter().position(|&l| l >= k) {
            return Err(Error::invalid(format!("item {} has label {} but only {k} classes exist", ids[bad], labels[bad])));
        }
        Ok(Self {
            images,
            labels,
            ids,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(height, width, channels)` of every image.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(RasterImage::dims)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`.
    pub fn select(&self, indices: &[usize]) -> (Vec<RasterImage>, Vec<usize>) {
        (
            indices.iter().map(|&i| self.images[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Resolves a `--dataset` argument: `synthetic:<spec>` or a folder path.
pub fn load_dataset(arg: &str, seed: u64) -> Result<ImageDataset> {
    match arg.strip_prefix("synthetic:") {
        Some(spec) => gen_synthetic(&spec.parse()?, seed),
        None => load_png_folder(std::path::Path::new(arg)),
    }
}
