//! Dataset manifests: directory scanning, seeded train/val splitting,
//! and JSON serialization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub relative_path: PathBuf,
}

/// A split of a clean-image corpus rooted at `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "manifest for {:?} split has no entries",
                self.split
            )));
        }
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.image_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.entries.len() {
            return Err(Error::InvalidConfig("duplicate image_ids in manifest".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_entry(&self, idx: usize) -> Result<Image> {
        let entry = &self.entries[idx];
        load_image(self.root.join(&entry.relative_path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Scans `root` for grayscale rasters and splits them into train/val
/// manifests by a seeded shuffle of the image ids.
///
/// `train_fraction` defaults to 0.8 at the call sites; the split is a
/// partition of all discovered entries.
pub fn build_manifests(
    root: impl AsRef<Path>,
    seed: u64,
    train_fraction: f64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must be in [0,1], got {train_fraction}"
        )));
    }
    let root = root.as_ref();
    let mut entries = scan_images(root)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", root.display())));
    }
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    let n_train = (entries.len() as f64 * train_fraction).round() as usize;
    let (train, val) = entries.split_at(n_train.min(entries.len()));

    let make = |split, list: &[ManifestEntry]| DatasetManifest {
        root: root.to_path_buf(),
        split,
        seed,
        entries: list.to_vec(),
    };
    Ok((make(Split::Train, train), make(Split::Val, val)))
}

fn scan_images(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let rd = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("png" | "tif" | "tiff")) {
                let rel = path.strip_prefix(root).expect("scanned under root").to_path_buf();
                let id = rel
                    .with_extension("")
                    .to_string_lossy()
                    .replace(std::path::MAIN_SEPARATOR, "/");
                out.push(ManifestEntry { image_id: id, relative_path: rel });
            }
        }
    }
    Ok(out)
}
