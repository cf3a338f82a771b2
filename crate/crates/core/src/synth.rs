//! Synthetic color-swap task: a textured background with one flat-colored
//! shape whose color identifies the domain.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_bytes, DomainTag, ImageBatch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    ColorSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_domain: usize,
    /// Held-out images per domain.
    pub n_test: usize,
    pub image_size: usize,
    pub task: SyntheticTask,
    pub fg_color_a: [u8; 3],
    pub fg_color_b: [u8; 3],
    pub bg_texture_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_domain: 200,
            n_test: 0,
            image_size: 32,
            task: SyntheticTask::ColorSwap,
            fg_color_a: [220, 40, 40],
            fg_color_b: [40, 60, 220],
            bg_texture_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fg_color_a == self.fg_color_b {
            return Err(Error::Config("synthetic foreground colors must differ".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("synthetic images must be at least 8 pixels".into()));
        }
        if self.n_per_domain == 0 {
            return Err(Error::Config("n_per_domain must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fg_color(&self, domain: DomainTag) -> [u8; 3] {
        match domain {
            DomainTag::A => self.fg_color_a,
            DomainTag::B => self.fg_color_b,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_per_domain,
            Split::Test => self.n_test,
        }
    }
}

/// Channel-major bytes and per-pixel foreground masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSet {
    pub domain: DomainTag,
    pub size: usize,
    /// `n x 3 x size x size`.
    pub pixels: Vec<u8>,
    /// `n x size x size`, 1 on the shape.
    pub masks: Vec<u8>,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.masks.len() / (self.size * self.size)
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let s = 3 * self.size * self.size;
        &self.pixels[i * s..(i + 1) * s]
    }

    pub fn mask(&self, i: usize) -> &[u8] {
        let s = self.size * self.size;
        &self.masks[i * s..(i + 1) * s]
    }

    pub fn to_batch<T: Scalar>(&self) -> Result<ImageBatch<T>> {
        normalize_bytes(&self.pixels, [self.len(), 3, self.size, self.size], self.domain)
    }
}

fn stream_seed(spec: &SyntheticSpec, domain: DomainTag, split: Split) -> u64 {
    let d = match domain {
        DomainTag::A => 0u64,
        DomainTag::B => 1,
    };
    let s = match split {
        Split::Train => 0u64,
        Split::Test => 2,
    };
    spec.bg_texture_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(d + s + 1)
}

/// Per-channel background level; the sinusoids average to zero around it.
const BG_BASE: [f64; 3] = [128.0, 128.0, 128.0];
const BG_AMPLITUDE: f64 = 10.0;

/// Sum of three whole-period sinusoids around `base`, one channel.
fn texture(size: usize, base: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0..=2) as f64,
                rng.random_range(1..=2) as f64,
                rng.random_range(0.0..core::f64::consts::TAU),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| libm::sin(core::f64::consts::TAU * (fx * u + fy * v) + ph))
                .sum();
            out.push(base + BG_AMPLITUDE * t);
        }
    }
    out
}

/// Draws `spec.count(split)` images of `domain`; identical inputs give identical bytes.
pub fn generate(spec: &SyntheticSpec, domain: DomainTag, split: Split) -> Result<SyntheticSet> {
    spec.validate()?;
    let n = spec.count(split);
    let size = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec, domain, split));
    let fg = spec.fg_color(domain);
    let mut pixels = Vec::with_capacity(n * 3 * size * size);
    let mut masks = Vec::with_capacity(n * size * size);
    for _ in 0..n {
        let min_r = (size / 8).max(2);
        let max_r = (size / 4).max(min_r + 1);
        let r = rng.random_range(min_r..=max_r);
        let cx = rng.random_range(r + 1..size - r);
        let cy = rng.random_range(r + 1..size - r);
        let circle = rng.random_bool(0.5);
        let mask: Vec<u8> = (0..size * size)
            .map(|p| {
                let (x, y) = ((p % size) as f64 + 0.5, (p / size) as f64 + 0.5);
                let (dx, dy) = (x - cx as f64, y - cy as f64);
                let inside = if circle {
                    dx * dx + dy * dy <= (r * r) as f64
                } else {
                    dx.abs() <= r as f64 && dy.abs() <= r as f64
                };
                inside as u8
            })
            .collect();
        for c in 0..3 {
            let bg = texture(size, BG_BASE[c], &mut rng);
            for p in 0..size * size {
                let v = if mask[p] == 1 { fg[c] as f64 } else { bg[p] };
                pixels.push(libm::round(v).clamp(0.0, 255.0) as u8);
            }
        }
        masks.extend(mask);
    }
    Ok(SyntheticSet {
        domain,
        size,
        pixels,
        masks,
    })
}

/// Mean color in [-1, 1] units over the pixels where `select(mask)` holds.
pub fn masked_mean<T: Scalar>(batch: &ImageBatch<T>, masks: &[u8], select: impl Fn(u8) -> bool) -> [f64; 3] {
    let (n, c, h, w) = batch.dims();
    let plane = h * w;
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for i in 0..n {
        let img = batch.data.item(i);
        for p in 0..plane {
            if select(masks[i * plane + p]) {
                for (ch, s) in sum.iter_mut().enumerate().take(c.min(3)) {
                    *s += img[ch * plane + p].as_f64();
                }
                count += 1;
            }
        }
    }
    sum.map(|s| s / count.max(1) as f64)
}

/// Byte color mapped to [-1, 1].
pub fn unit_color(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| v as f64 / 127.5 - 1.0)
}

/// Fraction of the way `observed` moved from `from` toward `to`, by projection.
pub fn color_progress(observed: [f64; 3], from: [f64; 3], to: [f64; 3]) -> f64 {
    let dir: [f64; 3] = core::array::from_fn(|k| to[k] - from[k]);
    let num: f64 = (0..3).map(|k| (observed[k] - from[k]) * dir[k]).sum();
    let den: f64 = dir.iter().map(|d| d * d).sum();
    num / den
}

/// Mean absolute per-value change outside the masks, in [-1, 1] units.
pub fn background_change<T: Scalar>(before: &ImageBatch<T>, after: &ImageBatch<T>, masks: &[u8]) -> f64 {
    let (n, c, h, w) = before.dims();
    let plane = h * w;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let (x, y) = (before.data.item(i), after.data.item(i));
        for p in 0..plane {
            if masks[i * plane + p] == 0 {
                for ch in 0..c {
                    acc += (x[ch * plane + p].as_f64() - y[ch * plane + p].as_f64()).abs();
                    count += 1;
                }
            }
        }
    }
    acc / count.max(1) as f64
}
