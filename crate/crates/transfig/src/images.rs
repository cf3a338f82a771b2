//! PNG/JPEG decoding and encoding between files and channel-major buffers.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};
use transfig_core::domain::resize_bilinear;
use transfig_core::{DomainTag, ImageBatch, Provenance, Tensor};

use crate::error::{io_at, AppError, Result};

/// A decoded RGB image, channel-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub width: usize,
    pub height: usize,
    pub chw: Vec<u8>,
}

impl Decoded {
    /// Values in [-1, 1], bilinearly resized to `size x size`.
    pub fn normalized(&self, size: usize) -> Vec<f32> {
        let unit: Vec<f32> = self.chw.iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
        resize_bilinear(&unit, (3, self.height, self.width), (size, size))
    }
}

pub fn decode(path: &Path) -> Result<Decoded> {
    let img = ImageReader::open(path)
        .map_err(io_at(path))?
        .with_guessed_format()
        .map_err(io_at(path))?
        .decode()
        .map_err(|e| AppError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut chw = vec![0u8; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            chw[c * w * h + i] = px[c];
        }
    }
    Ok(Decoded {
        width: w,
        height: h,
        chw,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    Ok(())
}

pub fn write_rgb_png(path: &Path, chw: &[u8], height: usize, width: usize) -> Result<()> {
    ensure_parent(path)?;
    let plane = height * width;
    let img = RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = y as usize * width + x as usize;
        image::Rgb([chw[p], chw[plane + p], chw[2 * plane + p]])
    });
    img.save(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a 0/1 mask as a black/white PNG.
pub fn write_mask_png(path: &Path, mask: &[u8], height: usize, width: usize) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([if mask[y as usize * width + x as usize] != 0 { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a mask PNG back as 0/1 values.
pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = ImageReader::open(path)
        .map_err(io_at(path))?
        .decode()
        .map_err(|e| AppError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.pixels().map(|p| (p[0] > 127) as u8).collect()))
}

/// Stacks decoded images into one batch at `size x size`.
pub fn stack(images: &[Decoded], size: usize, domain: DomainTag) -> Result<ImageBatch<f32>> {
    let mut data = Vec::with_capacity(images.len() * 3 * size * size);
    for img in images {
        data.extend(img.normalized(size));
    }
    let t = Tensor::from_vec(&[images.len(), 3, size, size], data)?;
    Ok(ImageBatch::new(t, domain, Provenance::Dataset)?)
}

/// Side-by-side grid: one row per item, `columns` batches left to right.
pub fn write_grid(path: &Path, columns: &[&ImageBatch<f32>]) -> Result<()> {
    let (n, _, h, w) = columns[0].dims();
    let cols = columns.len();
    let (gh, gw) = (n * h, cols * w);
    let mut chw = vec![0u8; 3 * gh * gw];
    for (ci, batch) in columns.iter().enumerate() {
        let bytes = transfig_core::denormalize(batch).bytes;
        for i in 0..n {
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let src = ((i * 3 + c) * h + y) * w + x;
                        let dst = c * gh * gw + (i * h + y) * gw + ci * w + x;
                        chw[dst] = bytes[src];
                    }
                }
            }
        }
    }
    write_rgb_png(path, &chw, gh, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let chw: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 4) as u8).collect();
        write_rgb_png(&path, &chw, 4, 5).unwrap();
        let back = decode(&path).unwrap();
        assert_eq!((back.height, back.width), (4, 5));
        assert_eq!(back.chw, chw);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = [0, 1, 1, 0, 1, 0];
        write_mask_png(&path, &mask, 2, 3).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), (2, 3, mask.to_vec()));
    }
}
