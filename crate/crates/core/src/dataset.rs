//! In-memory image sets and epoch-wise sampling without replacement.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{augment_image, AugmentConfig, DomainTag, ImageBatch, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoded, normalized images of one domain, all of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet<T> {
    domain: DomainTag,
    images: Tensor<T>,
}

impl<T: Scalar> ImageSet<T> {
    pub fn new(domain: DomainTag, images: Tensor<T>) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] == 0 {
            return Err(Error::Config("an image set needs at least one n x c x h x w image".into()));
        }
        Ok(Self { domain, images })
    }

    pub fn from_batch(batch: ImageBatch<T>) -> Result<Self> {
        Self::new(batch.domain, batch.data)
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(c, h, w)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[T] {
        self.images.item(i)
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    /// One image, augmented when `augment` is given.
    pub fn draw<R: Rng + ?Sized>(&self, i: usize, augment: Option<&AugmentConfig>, rng: &mut R) -> Result<Vec<T>> {
        match augment {
            Some(cfg) => augment_image(self.image(i), self.image_dims(), cfg, rng),
            None => Ok(self.image(i).to_vec()),
        }
    }

    /// Edge length of drawn images.
    pub fn output_size(&self, augment: Option<&AugmentConfig>) -> usize {
        augment.map_or(self.image_dims().1, |a| a.crop_size)
    }

    pub fn as_batch(&self) -> ImageBatch<T> {
        ImageBatch::new(self.images.clone(), self.domain, Provenance::Dataset).expect("rank-4 set")
    }
}

/// Shuffled pass over `0..len`, reshuffled whenever it runs out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochOrder {
    order: Vec<usize>,
    cursor: usize,
}

impl EpochOrder {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            // forces a shuffle on first use
            cursor: len,
        }
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Draws `n` images from `set` in epoch order.
pub fn draw_batch<T: Scalar, R: Rng + ?Sized>(
    set: &ImageSet<T>,
    order: &mut EpochOrder,
    n: usize,
    augment: Option<&AugmentConfig>,
    rng: &mut R,
) -> Result<ImageBatch<T>> {
    let (c, _, _) = set.image_dims();
    let size = set.output_size(augment);
    let mut data = Vec::with_capacity(n * c * size * size);
    for _ in 0..n {
        let i = order.next(rng);
        data.extend(set.draw(i, augment, rng)?);
    }
    ImageBatch::new(Tensor::from_vec(&[n, c, size, size], data)?, set.domain(), Provenance::Dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epoch_visits_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut order = EpochOrder::new(7);
        let mut seen: Vec<usize> = (0..7).map(|_| order.next(&mut rng)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn empty_set_rejected() {
        assert!(ImageSet::<f32>::new(DomainTag::A, Tensor::zeros(&[0, 3, 4, 4])).is_err());
    }
}
