//! Generator input pools: the task's source-domain dataset plus a bounded
//! FIFO of generated images, with stage-dependent routing of new outputs.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpochOrder, ImageSet};
use crate::domain::{AugmentConfig, DomainTag, ImageBatch, Provenance};
use crate::error::{Error, Result};
use crate::generator::GeneratorRole;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_CAPACITY: usize = 50;
pub const DEFAULT_P_GENERATED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStage {
    /// Outputs return to the producing task's own pool.
    Stage1,
    /// Outputs go to the inverse task's pool.
    Stage2,
}

/// How dataset and buffered images are interleaved in a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Each slot picks the buffer with probability `p_generated`.
    Probabilistic,
    /// Slots alternate dataset / buffer while the buffer is non-empty.
    Alternate,
}

/// Where buffered images live. Only host memory exists in this build; the
/// device option is accepted and stored on the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolStorage {
    Host,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub capacity: usize,
    pub p_generated: f64,
    pub mixing: Mixing,
    pub storage: PoolStorage,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            p_generated: DEFAULT_P_GENERATED,
            mixing: Mixing::Probabilistic,
            storage: PoolStorage::Host,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_generated) {
            return Err(Error::Config(format!(
                "p_generated must lie in [0, 1], got {}",
                self.p_generated
            )));
        }
        Ok(())
    }
}

/// Serializable part of a pool; the dataset is reattached on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PoolState<T> {
    pub task: GeneratorRole,
    pub config: PoolConfig,
    pub buffer: VecDeque<Vec<T>>,
    pub order: EpochOrder,
    pub alternate_next_generated: bool,
}

#[derive(Debug, Clone)]
pub struct ImagePool<T> {
    state: PoolState<T>,
    dataset: Arc<ImageSet<T>>,
    augment: Option<AugmentConfig>,
}

/// Creates the pool of `task`, seeded with its source-domain dataset.
pub fn init_pool<T: Scalar>(
    task: GeneratorRole,
    dataset: Arc<ImageSet<T>>,
    config: PoolConfig,
    augment: Option<AugmentConfig>,
) -> Result<ImagePool<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("pool dataset is empty".into()));
    }
    if dataset.domain() != task.source() {
        return Err(Error::Contract(format!(
            "pool {} needs a domain {:?} dataset, got {:?}",
            task.name(),
            task.source(),
            dataset.domain()
        )));
    }
    if let Some(a) = &augment {
        a.validate()?;
    }
    let len = dataset.len();
    Ok(ImagePool {
        state: PoolState {
            task,
            config,
            buffer: VecDeque::with_capacity(config.capacity),
            order: EpochOrder::new(len),
            alternate_next_generated: false,
        },
        dataset,
        augment,
    })
}

impl<T: Scalar> ImagePool<T> {
    pub fn restore(state: PoolState<T>, dataset: Arc<ImageSet<T>>, augment: Option<AugmentConfig>) -> Result<Self> {
        if dataset.domain() != state.task.source() || state.order.len() != dataset.len() {
            return Err(Error::Contract("pool state does not match its dataset".into()));
        }
        Ok(Self {
            state,
            dataset,
            augment,
        })
    }

    pub fn state(&self) -> &PoolState<T> {
        &self.state
    }

    pub fn task(&self) -> GeneratorRole {
        self.state.task
    }

    /// Domain of every image this pool holds or yields.
    pub fn domain(&self) -> DomainTag {
        self.state.task.source()
    }

    pub fn buffered(&self) -> usize {
        self.state.buffer.len()
    }

    pub fn capacity(&self) -> usize {
        self.state.config.capacity
    }

    pub fn dataset(&self) -> &Arc<ImageSet<T>> {
        &self.dataset
    }

    fn image_dims(&self) -> (usize, usize, usize) {
        let (c, _, _) = self.dataset.image_dims();
        let s = self.dataset.output_size(self.augment.as_ref());
        (c, s, s)
    }

    fn take_generated<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.state.buffer.is_empty() {
            return false;
        }
        match self.state.config.mixing {
            Mixing::Probabilistic => {
                let p = self.state.config.p_generated;
                p > 0.0 && rng.random_bool(p)
            }
            Mixing::Alternate => {
                let g = self.state.alternate_next_generated;
                self.state.alternate_next_generated = !g;
                g
            }
        }
    }

    /// Draws `n` inputs; each slot comes from the buffer (uniformly) or from
    /// the dataset (epoch order).
    pub fn sample<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<ImageBatch<T>> {
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let (c, h, w) = self.image_dims();
        let mut data = Vec::with_capacity(n * c * h * w);
        let mut provenance = Vec::with_capacity(n);
        for _ in 0..n {
            if self.take_generated(rng) {
                let k = rng.random_range(0..self.state.buffer.len());
                data.extend_from_slice(&self.state.buffer[k]);
                provenance.push(Provenance::Generated);
            } else {
                let i = self.state.order.next(rng);
                data.extend(self.dataset.draw(i, self.augment.as_ref(), rng)?);
                provenance.push(Provenance::Dataset);
            }
        }
        Ok(ImageBatch {
            data: Tensor::from_vec(&[n, c, h, w], data)?,
            domain: self.domain(),
            provenance,
        })
    }

    pub fn sample_seeded(&mut self, n: usize, rng_seed: u64) -> Result<ImageBatch<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample(n, &mut rng)
    }

    /// Appends generated images relabeled to this pool's domain, evicting the
    /// oldest entries beyond capacity.
    pub fn push(&mut self, images: &ImageBatch<T>) -> Result<()> {
        if let Some(i) = images.provenance.iter().position(|p| *p != Provenance::Generated) {
            return Err(Error::Contract(format!(
                "pool {} only accepts generated images; item {i} comes from the dataset",
                self.task().name()
            )));
        }
        let (n, c, h, w) = images.dims();
        if (c, h, w) != self.image_dims() {
            return Err(Error::Dimension {
                axis: "image",
                expected: self.image_dims().0 * self.image_dims().1 * self.image_dims().2,
                found: c * h * w,
            });
        }
        let cap = self.state.config.capacity;
        if cap == 0 {
            return Ok(());
        }
        for i in 0..n {
            if self.state.buffer.len() == cap {
                self.state.buffer.pop_front();
            }
            self.state.buffer.push_back(images.data.item(i).to_vec());
        }
        debug_assert!(self.state.buffer.len() <= cap);
        Ok(())
    }
}

/// Pool that receives `produced_by`'s outputs in `stage`.
pub const fn route_target(produced_by: GeneratorRole, stage: TrainingStage) -> GeneratorRole {
    match stage {
        TrainingStage::Stage1 => produced_by,
        TrainingStage::Stage2 => produced_by.inverse(),
    }
}

/// Pushes generated images into the pool chosen by the stage routing.
pub fn route_push<T: Scalar>(
    pool_ab: &mut ImagePool<T>,
    pool_ba: &mut ImagePool<T>,
    produced_by: GeneratorRole,
    images: &ImageBatch<T>,
    stage: TrainingStage,
) -> Result<()> {
    let pool = match route_target(produced_by, stage) {
        GeneratorRole::AB => pool_ab,
        GeneratorRole::BA => pool_ba,
    };
    pool.push(images)
}
