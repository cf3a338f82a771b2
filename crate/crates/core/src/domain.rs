//! Image batches, domain identity and train-time augmentation.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One of the two image domains. Domain B carries the `true` label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DomainTag {
    A,
    B,
}

impl DomainTag {
    /// Binary discriminator label: A is 0, B is 1, in every direction.
    pub const fn label(self) -> f64 {
        match self {
            DomainTag::A => 0.0,
            DomainTag::B => 1.0,
        }
    }

    pub const fn other(self) -> Self {
        match self {
            DomainTag::A => DomainTag::B,
            DomainTag::B => DomainTag::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Dataset,
    Generated,
}

/// `n x c x h x w` images in `[-1, 1]`, tagged with their domain.
///
/// Provenance is kept per item since pool draws mix dataset and generated
/// images in one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ImageBatch<T> {
    pub data: Tensor<T>,
    pub domain: DomainTag,
    pub provenance: Vec<Provenance>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn new(data: Tensor<T>, domain: DomainTag, provenance: Provenance) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::Dimension {
                axis: "rank",
                expected: 4,
                found: data.shape().len(),
            });
        }
        let n = data.shape()[0];
        Ok(Self {
            data,
            domain,
            provenance: vec![provenance; n],
        })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dims4()
    }

    /// True when every value is finite and inside `[-1, 1]`.
    pub fn in_range(&self) -> bool {
        self.data
            .data()
            .iter()
            .all(|v| v.is_finite() && v.abs() <= T::one())
    }

    pub fn generated_fraction(&self) -> f64 {
        if self.provenance.is_empty() {
            return 0.0;
        }
        let g = self
            .provenance
            .iter()
            .filter(|p| **p == Provenance::Generated)
            .count();
        g as f64 / self.provenance.len() as f64
    }

    /// Items `idx` as a new batch of the same domain.
    pub fn select(&self, idx: &[usize]) -> Self {
        let (_, c, h, w) = self.dims();
        let items: Vec<&[T]> = idx.iter().map(|&i| self.data.item(i)).collect();
        Self {
            data: Tensor::stack(&items, &[c, h, w]),
            domain: self.domain,
            provenance: idx.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImageBatch<U> {
        ImageBatch {
            data: self.data.cast(),
            domain: self.domain,
            provenance: self.provenance.clone(),
        }
    }
}

/// Maps raw pixel values in `[0, 255]` to `[-1, 1]`.
pub fn normalize<T: Scalar>(raw: &Tensor<f64>, domain: DomainTag) -> Result<ImageBatch<T>> {
    if let Some(bad) = raw.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::DataCorruption(alloc::format!("non-finite pixel value {bad}")));
    }
    if raw.data().iter().any(|v| !(0.0..=255.0).contains(v)) {
        return Err(Error::DataCorruption("pixel value outside [0, 255]".into()));
    }
    let data = Tensor::from_vec(
        raw.shape(),
        raw.data()
            .iter()
            .map(|&v| T::from_f64(v / 127.5 - 1.0))
            .collect(),
    )?;
    ImageBatch::new(data, domain, Provenance::Dataset)
}

/// [`normalize`] for decoded 8-bit images (`n x c x h x w` bytes).
pub fn normalize_bytes<T: Scalar>(
    bytes: &[u8],
    shape: [usize; 4],
    domain: DomainTag,
) -> Result<ImageBatch<T>> {
    let data = Tensor::from_vec(
        &shape,
        bytes
            .iter()
            .map(|&b| T::from_f64(b as f64 / 127.5 - 1.0))
            .collect(),
    )?;
    ImageBatch::new(data, domain, Provenance::Dataset)
}

/// Bytes of a denormalized batch plus the number of values that had to be
/// clamped into `[-1, 1]` first.
#[derive(Debug, Clone, PartialEq)]
pub struct Denormalized {
    pub bytes: Vec<u8>,
    pub clamped: usize,
}

pub fn denormalize<T: Scalar>(batch: &ImageBatch<T>) -> Denormalized {
    let mut clamped = 0;
    let bytes = batch
        .data
        .data()
        .iter()
        .map(|v| {
            let mut x = v.as_f64();
            if !(-1.0..=1.0).contains(&x) {
                clamped += 1;
                x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
            }
            num_traits::Float::round((x + 1.0) * 127.5) as u8
        })
        .collect();
    Denormalized { bytes, clamped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub resize_factor: f64,
    pub crop_size: usize,
    pub flip: bool,
}

impl AugmentConfig {
    pub fn new(crop_size: usize) -> Self {
        Self {
            resize_factor: 1.125,
            crop_size,
            flip: false,
        }
    }

    /// Edge length images are resized to before cropping.
    pub fn resized(&self) -> usize {
        num_traits::Float::floor(self.crop_size as f64 * self.resize_factor) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || !self.resize_factor.is_finite() {
            return Err(Error::Config("crop size and resize factor must be positive".into()));
        }
        if self.resized() < self.crop_size {
            return Err(Error::Config(alloc::format!(
                "crop {} larger than resized edge {}",
                self.crop_size,
                self.resized()
            )));
        }
        Ok(())
    }
}

/// Bilinear resize of one `c x h x w` image, half-pixel centers, edge clamp.
pub fn resize_bilinear<T: Scalar>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    if (oh, ow) == (h, w) {
        return src.to_vec();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(oh, h);
    let xs = taps(ow, w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v00 = p[y0 * w + x0].as_f64();
                let v01 = p[y0 * w + x1].as_f64();
                let v10 = p[y1 * w + x0].as_f64();
                let v11 = p[y1 * w + x1].as_f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.push(T::from_f64(top + (bot - top) * fy));
            }
        }
    }
    out
}

/// Resize every item of a batch to `size x size`.
pub fn resize_batch<T: Scalar>(batch: &ImageBatch<T>, size: usize) -> ImageBatch<T> {
    let (n, c, h, w) = batch.dims();
    let mut data = Vec::with_capacity(n * c * size * size);
    for i in 0..n {
        data.extend(resize_bilinear(batch.data.item(i), (c, h, w), (size, size)));
    }
    ImageBatch {
        data: Tensor::from_vec(&[n, c, size, size], data).expect("resized shape"),
        domain: batch.domain,
        provenance: batch.provenance.clone(),
    }
}

/// Resize to `floor(crop * factor)` then take a uniformly placed crop.
pub fn augment_image<T: Scalar, R: Rng + ?Sized>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let r = cfg.resized();
    let crop = cfg.crop_size;
    let resized = resize_bilinear(src, (c, h, w), (r, r));
    let top = rng.random_range(0..=r - crop);
    let left = rng.random_range(0..=r - crop);
    let flip = cfg.flip && rng.random_bool(0.5);
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for y in 0..crop {
            let row = &resized[(ch * r + top + y) * r + left..][..crop];
            if flip {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    Ok(out)
}

/// Batch augmentation driven by a single seed.
pub fn resize_and_crop<T: Scalar>(
    batch: &ImageBatch<T>,
    cfg: &AugmentConfig,
    rng_seed: u64,
) -> Result<ImageBatch<T>> {
    let (n, c, h, w) = batch.dims();
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut data = Vec::with_capacity(n * c * cfg.crop_size * cfg.crop_size);
    for i in 0..n {
        data.extend(augment_image(batch.data.item(i), (c, h, w), cfg, &mut rng)?);
    }
    Ok(ImageBatch {
        data: Tensor::from_vec(&[n, c, cfg.crop_size, cfg.crop_size], data)?,
        domain: batch.domain,
        provenance: batch.provenance.clone(),
    })
}
