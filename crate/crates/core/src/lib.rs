//! Shared-discriminator unpaired image-to-image translation.
//!
//! Two generators translate between domains A and B while a single
//! conditional patch discriminator judges both directions. The crate is
//! `no_std` with `alloc`; file formats, the CLI and image IO live in the
//! `transfig` companion crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod ablation;
pub mod dataset;
pub mod discriminator;
pub mod domain;
pub mod error;
pub mod generator;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod metrics;
pub mod pool;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use ablation::{make_variant, AblationVariant};
pub use dataset::{EpochOrder, ImageSet};
pub use discriminator::{build_discriminator, Discriminator, DiscriminatorConfig};
pub use domain::{denormalize, normalize, AugmentConfig, DomainTag, ImageBatch, Provenance};
pub use error::{Error, Result};
pub use generator::{build_generator, Arch, Generator, GeneratorConfig, GeneratorRole};
pub use objectives::{DTerm, DiscriminatorObjective, LossBreakdown, LossWeights};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use pool::{init_pool, route_target, ImagePool, PoolConfig, TrainingStage};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
pub use trainer::{select_stage, TrainConfig, TrainSnapshot, TrainState};
pub use metrics::{fid, kid, ConvEmbedder, Embedder, FeatureSet, MetricReport};
pub use synth::{SyntheticSpec, SyntheticSet};
