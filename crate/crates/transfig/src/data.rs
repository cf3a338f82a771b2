//! Unpaired image folders and the synthetic color-swap dataset on disk.
//!
//! Layout follows the public horse2zebra convention: `<root>/trainA`,
//! `trainB`, `testA`, `testB`. Synthetic sets additionally carry
//! `masks/<split dir>/NNNN.png`, used only by evaluation code.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use transfig_core::synth::{self, Split};
use transfig_core::{DomainTag, ImageBatch, ImageSet, SyntheticSpec};

use crate::error::{io_at, AppError, Result};
use crate::images::{self, Decoded};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// One domain's decodable images in lexicographic path order.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub domain: DomainTag,
    pub image_paths: Vec<PathBuf>,
    pub images: Vec<Decoded>,
    /// Files with an image extension that failed to decode.
    pub skipped: usize,
}

impl UnpairedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn to_batch(&self, size: usize) -> Result<ImageBatch<f32>> {
        images::stack(&self.images, size, self.domain)
    }

    pub fn to_image_set(&self, size: usize) -> Result<Arc<ImageSet<f32>>> {
        Ok(Arc::new(ImageSet::from_batch(self.to_batch(size)?)?))
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(AppError::Usage(format!("data directory {} does not exist", dir.display())));
    }
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let path = entry.map_err(io_at(dir))?.path();
        if path.is_file() && is_image(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_domain(dir: &Path, domain: DomainTag) -> Result<UnpairedDataset> {
    let mut set = UnpairedDataset {
        domain,
        image_paths: Vec::new(),
        images: Vec::new(),
        skipped: 0,
    };
    for path in list_images(dir)? {
        match images::decode(&path) {
            Ok(img) => {
                set.images.push(img);
                set.image_paths.push(path);
            }
            Err(e) => {
                log::warn!("skipping undecodable image: {e}");
                set.skipped += 1;
            }
        }
    }
    if set.is_empty() {
        return Err(AppError::Usage(format!("no decodable images in {}", dir.display())));
    }
    if set.skipped > 0 {
        log::warn!("{}: skipped {} undecodable file(s)", dir.display(), set.skipped);
    }
    Ok(set)
}

/// Loads two folders as domains A and B. Nothing pairs them.
pub fn load_unpaired(dir_a: &Path, dir_b: &Path) -> Result<(UnpairedDataset, UnpairedDataset)> {
    Ok((load_domain(dir_a, DomainTag::A)?, load_domain(dir_b, DomainTag::B)?))
}

pub fn split_dir(root: &Path, split: Split, domain: DomainTag) -> PathBuf {
    root.join(split_name(split, domain))
}

pub fn split_name(split: Split, domain: DomainTag) -> String {
    let s = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let d = match domain {
        DomainTag::A => "A",
        DomainTag::B => "B",
    };
    format!("{s}{d}")
}

pub fn load_split(root: &Path, split: Split) -> Result<(UnpairedDataset, UnpairedDataset)> {
    load_unpaired(&split_dir(root, split, DomainTag::A), &split_dir(root, split, DomainTag::B))
}

fn image_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Writes the synthetic set under `out_dir` and returns the train A / B dirs.
/// Test splits are written when `spec.n_test > 0`.
pub fn make_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    spec.validate()?;
    for split in [Split::Train, Split::Test] {
        if spec.count(split) == 0 {
            continue;
        }
        for domain in [DomainTag::A, DomainTag::B] {
            let set = synth::generate(spec, domain, split)?;
            let name = split_name(split, domain);
            let (img_dir, mask_dir) = (out_dir.join(&name), out_dir.join("masks").join(&name));
            for i in 0..set.len() {
                images::write_rgb_png(&img_dir.join(image_name(i)), set.image(i), set.size, set.size)?;
                images::write_mask_png(&mask_dir.join(image_name(i)), set.mask(i), set.size, set.size)?;
            }
        }
    }
    let spec_path = out_dir.join("synthetic.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(io_at(&spec_path))?;
    Ok((
        split_dir(out_dir, Split::Train, DomainTag::A),
        split_dir(out_dir, Split::Train, DomainTag::B),
    ))
}

/// Masks of a synthetic split, concatenated in image order, resized by
/// nearest neighbour to `size`.
pub fn load_masks(root: &Path, split: Split, domain: DomainTag, size: usize) -> Result<Vec<u8>> {
    let dir = root.join("masks").join(split_name(split, domain));
    let mut out = Vec::new();
    for path in list_images(&dir)? {
        let (h, w, m) = images::read_mask_png(&path)?;
        for y in 0..size {
            for x in 0..size {
                out.push(m[(y * h / size) * w + x * w / size]);
            }
        }
    }
    Ok(out)
}
