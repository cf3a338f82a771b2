//! Training configuration, state and the per-step update.
//!
//! A step samples generator inputs from both pools, updates the shared
//! discriminator on detached generator outputs, then updates each generator
//! against the updated discriminator, and finally routes the outputs into the
//! pools according to the current stage.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ablation::AblationVariant;
use crate::dataset::{draw_batch, EpochOrder, ImageSet};
use crate::discriminator::{build_discriminator, Discriminator, DiscriminatorConfig};
use crate::domain::{AugmentConfig, DomainTag, ImageBatch, Provenance};
use crate::error::{Error, Result};
use crate::generator::{build_generator, Arch, Generator, GeneratorConfig, GeneratorRole};
use crate::nn::{gradients_for, Tape, Var};
use crate::objectives::{
    discriminator_loss_from_generated, record_generator_loss, DiscriminatorInputs, DiscriminatorObjective,
    GeneratorLossValues, LossBreakdown, LossWeights,
};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::pool::{init_pool, route_push, ImagePool, PoolConfig, PoolState, TrainingStage};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Any loss above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    /// First epoch trained in stage 2.
    pub stage_switch_epoch: usize,
    /// Optional hard cap on optimization steps.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub image_size: usize,
    pub resize_factor: f64,
    pub flip: bool,
    pub seed: u64,
    pub pool: PoolConfig,
    pub variant: AblationVariant,
    pub d_objective: DiscriminatorObjective,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Checkpoint period in epochs; a final checkpoint is always written.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Full-size defaults: ResNet generator, 64-filter PatchGAN, batch 4,
    /// Adam 1e-4 (0.5, 0.999), lambdas 10 / 100.
    pub fn new(image_size: usize, total_epochs: usize) -> Self {
        Self {
            total_epochs,
            stage_switch_epoch: total_epochs / 2,
            max_steps: None,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
            image_size,
            resize_factor: 1.125,
            flip: false,
            seed: 0,
            pool: PoolConfig::default(),
            variant: AblationVariant::Baseline,
            d_objective: DiscriminatorObjective::Full,
            generator: GeneratorConfig::resnet(image_size),
            discriminator: DiscriminatorConfig::default(),
            checkpoint_every: 10,
        }
    }

    /// Miniature networks for desk-scale runs: 2000 steps over 200 images.
    pub fn desk(image_size: usize) -> Self {
        Self {
            generator: GeneratorConfig::miniature(Arch::Resnet),
            discriminator: DiscriminatorConfig::miniature(),
            checkpoint_every: 10,
            ..Self::new(image_size, 40)
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            resize_factor: self.resize_factor,
            crop_size: self.image_size,
            flip: self.flip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if self.stage_switch_epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "stage_switch_epoch {} exceeds total_epochs {}",
                self.stage_switch_epoch, self.total_epochs
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.pool.validate()?;
        self.augment().validate()?;
        self.generator.validate()?;
        self.generator.check_size(self.image_size)?;
        self.discriminator.validate()?;
        if self.discriminator.image_channels() != self.generator.out_channels
            || self.generator.in_channels != self.generator.out_channels
        {
            return Err(Error::Config("generator and discriminator channel counts disagree".into()));
        }
        if self.discriminator.patch_grid(self.image_size).is_none() {
            return Err(Error::Config(format!(
                "{}px is too small for a {}-layer patch discriminator",
                self.image_size, self.discriminator.n_layers
            )));
        }
        Ok(())
    }
}

/// Stage for `epoch`: a single switch at `stage_switch_epoch`, or constant
/// under the stage ablations.
pub fn select_stage(epoch: usize, cfg: &TrainConfig) -> TrainingStage {
    match cfg.variant {
        AblationVariant::NoStage1 => TrainingStage::Stage2,
        AblationVariant::NoStage2 => TrainingStage::Stage1,
        _ if epoch < cfg.stage_switch_epoch => TrainingStage::Stage1,
        _ => TrainingStage::Stage2,
    }
}

/// Seeds of the independent random streams of a run.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything that evolves during training, minus the datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainSnapshot<T> {
    pub config: TrainConfig,
    pub g_ab: Generator<T>,
    pub g_ba: Generator<T>,
    pub d_shared: Discriminator<T>,
    pub opt_g_ab: Optimizer<T>,
    pub opt_g_ba: Optimizer<T>,
    pub opt_d: Optimizer<T>,
    pub pool_ab: PoolState<T>,
    pub pool_ba: PoolState<T>,
    pub order_a: EpochOrder,
    pub order_b: EpochOrder,
    pub step: u64,
    pub epoch: usize,
    pub stage: TrainingStage,
    pub rng: ChaCha8Rng,
    #[serde(default)]
    pub provenance: ProvenanceCounts,
}

/// Generator inputs seen so far, by provenance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub dataset: u64,
    pub generated: u64,
}

impl ProvenanceCounts {
    pub fn generated_fraction(&self) -> f64 {
        let total = self.dataset + self.generated;
        if total == 0 {
            0.0
        } else {
            self.generated as f64 / total as f64
        }
    }

    fn record<T>(&mut self, batch: &ImageBatch<T>) {
        for p in &batch.provenance {
            match p {
                Provenance::Dataset => self.dataset += 1,
                Provenance::Generated => self.generated += 1,
            }
        }
    }
}

pub struct TrainState<T> {
    cfg: TrainConfig,
    g_ab: Generator<T>,
    g_ba: Generator<T>,
    d_shared: Discriminator<T>,
    opt_g_ab: Optimizer<T>,
    opt_g_ba: Optimizer<T>,
    opt_d: Optimizer<T>,
    pool_ab: ImagePool<T>,
    pool_ba: ImagePool<T>,
    data_a: Arc<ImageSet<T>>,
    data_b: Arc<ImageSet<T>>,
    order_a: EpochOrder,
    order_b: EpochOrder,
    step: u64,
    epoch: usize,
    stage: TrainingStage,
    rng: ChaCha8Rng,
    provenance: ProvenanceCounts,
}

/// Inputs sampled for one step.
#[derive(Debug, Clone)]
pub struct StepInputs<T> {
    pub a_prime: ImageBatch<T>,
    pub b_prime: ImageBatch<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: TrainConfig, data_a: Arc<ImageSet<T>>, data_b: Arc<ImageSet<T>>) -> Result<Self> {
        cfg.validate()?;
        if data_a.domain() != DomainTag::A || data_b.domain() != DomainTag::B {
            return Err(Error::Contract("datasets must be tagged A and B".into()));
        }
        let g_ab = build_generator(&cfg.generator, GeneratorRole::AB, sub_seed(cfg.seed, 0))?;
        let g_ba = build_generator(&cfg.generator, GeneratorRole::BA, sub_seed(cfg.seed, 1))?;
        let d_shared = build_discriminator(&cfg.discriminator, sub_seed(cfg.seed, 2))?;
        let augment = Some(cfg.augment());
        let pool_ab = init_pool(GeneratorRole::AB, data_a.clone(), cfg.pool, augment)?;
        let pool_ba = init_pool(GeneratorRole::BA, data_b.clone(), cfg.pool, augment)?;
        Ok(Self {
            opt_g_ab: Optimizer::new(cfg.optimizer, g_ab.params()),
            opt_g_ba: Optimizer::new(cfg.optimizer, g_ba.params()),
            opt_d: Optimizer::new(cfg.optimizer, d_shared.params()),
            order_a: EpochOrder::new(data_a.len()),
            order_b: EpochOrder::new(data_b.len()),
            stage: select_stage(0, &cfg),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3)),
            g_ab,
            g_ba,
            d_shared,
            pool_ab,
            pool_ba,
            data_a,
            data_b,
            step: 0,
            epoch: 0,
            provenance: ProvenanceCounts::default(),
            cfg,
        })
    }

    pub fn restore(snapshot: TrainSnapshot<T>, data_a: Arc<ImageSet<T>>, data_b: Arc<ImageSet<T>>) -> Result<Self> {
        let augment = Some(snapshot.config.augment());
        if snapshot.order_a.len() != data_a.len() || snapshot.order_b.len() != data_b.len() {
            return Err(Error::Contract("checkpoint was taken on datasets of a different size".into()));
        }
        Ok(Self {
            pool_ab: ImagePool::restore(snapshot.pool_ab, data_a.clone(), augment)?,
            pool_ba: ImagePool::restore(snapshot.pool_ba, data_b.clone(), augment)?,
            cfg: snapshot.config,
            g_ab: snapshot.g_ab,
            g_ba: snapshot.g_ba,
            d_shared: snapshot.d_shared,
            opt_g_ab: snapshot.opt_g_ab,
            opt_g_ba: snapshot.opt_g_ba,
            opt_d: snapshot.opt_d,
            data_a,
            data_b,
            order_a: snapshot.order_a,
            order_b: snapshot.order_b,
            step: snapshot.step,
            epoch: snapshot.epoch,
            stage: snapshot.stage,
            rng: snapshot.rng,
            provenance: snapshot.provenance,
        })
    }

    pub fn snapshot(&self) -> TrainSnapshot<T> {
        TrainSnapshot {
            config: self.cfg.clone(),
            g_ab: self.g_ab.clone(),
            g_ba: self.g_ba.clone(),
            d_shared: self.d_shared.clone(),
            opt_g_ab: self.opt_g_ab.clone(),
            opt_g_ba: self.opt_g_ba.clone(),
            opt_d: self.opt_d.clone(),
            pool_ab: self.pool_ab.state().clone(),
            pool_ba: self.pool_ba.state().clone(),
            order_a: self.order_a.clone(),
            order_b: self.order_b.clone(),
            step: self.step,
            epoch: self.epoch,
            stage: self.stage,
            rng: self.rng.clone(),
            provenance: self.provenance,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn g_ab(&self) -> &Generator<T> {
        &self.g_ab
    }

    pub fn g_ba(&self) -> &Generator<T> {
        &self.g_ba
    }

    pub fn generator(&self, role: GeneratorRole) -> &Generator<T> {
        match role {
            GeneratorRole::AB => &self.g_ab,
            GeneratorRole::BA => &self.g_ba,
        }
    }

    /// The one discriminator both directions are scored by.
    pub fn d_shared(&self) -> &Discriminator<T> {
        &self.d_shared
    }

    pub fn pool(&self, task: GeneratorRole) -> &ImagePool<T> {
        match task {
            GeneratorRole::AB => &self.pool_ab,
            GeneratorRole::BA => &self.pool_ba,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn stage(&self) -> TrainingStage {
        self.stage
    }

    /// Provenance of every generator input sampled so far.
    pub fn provenance(&self) -> ProvenanceCounts {
        self.provenance
    }

    /// Steps in one pass over the larger dataset.
    pub fn steps_per_epoch(&self) -> u64 {
        let n = self.data_a.len().max(self.data_b.len());
        n.div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.steps_per_epoch() * self.cfg.total_epochs as u64;
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Fresh augmented dataset batches for the discriminator's random terms.
    pub fn next_real_batches(&mut self) -> Result<(ImageBatch<T>, ImageBatch<T>)> {
        let augment = self.cfg.augment();
        let n = self.cfg.batch_size;
        let a = draw_batch(&self.data_a, &mut self.order_a, n, Some(&augment), &mut self.rng)?;
        let b = draw_batch(&self.data_b, &mut self.order_b, n, Some(&augment), &mut self.rng)?;
        Ok((a, b))
    }

    pub fn sample_inputs(&mut self) -> Result<StepInputs<T>> {
        let n = self.cfg.batch_size;
        Ok(StepInputs {
            a_prime: self.pool_ab.sample(n, &mut self.rng)?,
            b_prime: self.pool_ba.sample(n, &mut self.rng)?,
        })
    }

    /// Draws data, runs one [`train_step`](Self::train_step) and advances
    /// the epoch/stage bookkeeping.
    pub fn advance(&mut self) -> Result<LossBreakdown> {
        let (a_real, b_real) = self.next_real_batches()?;
        self.train_step(&a_real, &b_real)
    }

    /// One discriminator update followed by one update of each generator.
    pub fn train_step(&mut self, a_real: &ImageBatch<T>, b_real: &ImageBatch<T>) -> Result<LossBreakdown> {
        if a_real.domain != DomainTag::A || b_real.domain != DomainTag::B {
            return Err(Error::Contract("real batches must be tagged A and B".into()));
        }
        let inputs = self.sample_inputs()?;
        self.provenance.record(&inputs.a_prime);
        self.provenance.record(&inputs.b_prime);
        let w = self.cfg.weights;
        let dropout = self.cfg.generator.use_dropout;

        // Generator forward passes, kept on their tapes for the later update.
        let mut tape_ab: Tape<'_, T> = Tape::new();
        let x_ab = tape_ab.input(inputs.a_prime.data.clone(), false);
        let y_ab = self
            .g_ab
            .forward(&mut tape_ab, x_ab, false, dropout.then_some(&mut self.rng))?;
        let mut tape_ba: Tape<'_, T> = Tape::new();
        let x_ba = tape_ba.input(inputs.b_prime.data.clone(), false);
        let y_ba = self
            .g_ba
            .forward(&mut tape_ba, x_ba, false, dropout.then_some(&mut self.rng))?;
        let fake_b = tape_ab.value(y_ab).clone();
        let fake_a = tape_ba.value(y_ba).clone();

        // Discriminator update on detached outputs.
        let d_loss = discriminator_loss_from_generated(
            &self.d_shared,
            &DiscriminatorInputs {
                a_prime: &inputs.a_prime,
                b_prime: &inputs.b_prime,
                a_real,
                b_real,
                fake_b: &fake_b,
                fake_a: &fake_a,
            },
            self.cfg.d_objective.terms(),
        )?;
        let mut d_grads = d_loss.grads;
        let d_grads = gradients_for(self.d_shared.params(), &mut d_grads);
        self.opt_d.step(self.d_shared.params_mut(), &d_grads)?;

        // Generator updates against the updated discriminator.
        let (ab_vals, ab_grads) = finish_generator(&mut tape_ab, &self.g_ab, &self.d_shared, y_ab, x_ab, &w)?;
        let (ba_vals, ba_grads) = finish_generator(&mut tape_ba, &self.g_ba, &self.d_shared, y_ba, x_ba, &w)?;
        drop(tape_ab);
        drop(tape_ba);

        let breakdown = LossBreakdown {
            d_total: d_loss.total,
            d_terms: d_loss.terms,
            g_ab_adv: ab_vals.adv,
            g_ab_rec: ab_vals.rec,
            g_ba_adv: ba_vals.adv,
            g_ba_rec: ba_vals.rec,
        };
        check_divergence(&breakdown)?;

        self.opt_g_ab.step(self.g_ab.params_mut(), &ab_grads)?;
        self.opt_g_ba.step(self.g_ba.params_mut(), &ba_grads)?;

        let n = fake_b.shape()[0];
        let fake_b = ImageBatch {
            data: fake_b,
            domain: DomainTag::B,
            provenance: alloc::vec![Provenance::Generated; n],
        };
        let fake_a = ImageBatch {
            data: fake_a,
            domain: DomainTag::A,
            provenance: alloc::vec![Provenance::Generated; n],
        };
        route_push(&mut self.pool_ab, &mut self.pool_ba, GeneratorRole::AB, &fake_b, self.stage)?;
        route_push(&mut self.pool_ab, &mut self.pool_ba, GeneratorRole::BA, &fake_a, self.stage)?;

        self.step += 1;
        if self.step % self.steps_per_epoch() == 0 {
            self.epoch += 1;
            let next = select_stage(self.epoch.min(self.cfg.total_epochs.saturating_sub(1)), &self.cfg);
            // stage 2 is never left once entered
            self.stage = self.stage.max(next);
        }
        Ok(breakdown)
    }
}

fn finish_generator<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    g: &'p Generator<T>,
    d: &'p Discriminator<T>,
    output: Var,
    input: Var,
    w: &LossWeights,
) -> Result<(GeneratorLossValues, Vec<Tensor<T>>)> {
    let (values, seeds) = record_generator_loss(tape, d, output, input, g.role(), w)?;
    let seed_refs: Vec<(Var, &Tensor<T>)> = seeds.iter().map(|(v, t)| (*v, t)).collect();
    let mut grads = tape.backward(&seed_refs);
    Ok((values, gradients_for(g.params(), &mut grads)))
}

fn check_divergence(b: &LossBreakdown) -> Result<()> {
    let named = b
        .d_terms
        .iter()
        .map(|(t, v)| (t.name(), *v))
        .chain([
            ("d_total", b.d_total),
            ("g_ab_adv", b.g_ab_adv),
            ("g_ab_rec", b.g_ab_rec),
            ("g_ba_adv", b.g_ba_adv),
            ("g_ba_rec", b.g_ba_rec),
        ]);
    for (term, value) in named {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { term: term.into() });
        }
        if value > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                term: term.into(),
                value,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_boundaries() {
        let mut cfg = TrainConfig::new(128, 100);
        cfg.stage_switch_epoch = 50;
        assert_eq!(select_stage(49, &cfg), TrainingStage::Stage1);
        assert_eq!(select_stage(50, &cfg), TrainingStage::Stage2);
        cfg.variant = AblationVariant::NoStage1;
        assert_eq!(select_stage(0, &cfg), TrainingStage::Stage2);
        cfg.variant = AblationVariant::NoStage2;
        assert_eq!(select_stage(99, &cfg), TrainingStage::Stage1);
    }

    #[test]
    fn stage_schedule_is_a_single_step() {
        let cfg = TrainConfig::new(128, 37);
        let stages: Vec<_> = (0..37).map(|e| select_stage(e, &cfg)).collect();
        let switches = stages.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1);
        assert_eq!(stages[0], TrainingStage::Stage1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::desk(32);
        assert!(cfg.validate().is_ok());
        cfg.stage_switch_epoch = cfg.total_epochs + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::desk(32);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::desk(30);
        cfg.resize_factor = 1.125;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(0, 0), sub_seed(0, 1));
        assert_ne!(sub_seed(0, 0), sub_seed(1, 0));
    }
}
