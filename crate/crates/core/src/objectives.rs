//! Shared-discriminator objective and the per-generator losses.
//!
//! Every expectation is a mean over the batch and the patch grid. The
//! discriminator loss is the mean of its terms, each a logit-space binary
//! cross-entropy against the domain label of the term (B = 1, A = 0).

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::domain::{DomainTag, ImageBatch};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorRole};
use crate::nn::{gradients_for, Gradients, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 10.0,
            lambda_rec: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_adv", self.lambda_adv), ("lambda_rec", self.lambda_rec)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(alloc::format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One (candidate | condition) term of the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DTerm {
    /// Random B image conditioned on `a'`.
    BGivenAp,
    /// Random A image conditioned on `a'`.
    AGivenAp,
    /// `G_AB(a')` conditioned on `a'`.
    FakeBGivenAp,
    /// Random A image conditioned on `b'`.
    AGivenBp,
    /// Random B image conditioned on `b'`.
    BGivenBp,
    /// `G_BA(b')` conditioned on `b'`.
    FakeAGivenBp,
}

impl DTerm {
    /// All six terms in objective order.
    pub const FULL: [DTerm; 6] = [
        DTerm::BGivenAp,
        DTerm::AGivenAp,
        DTerm::FakeBGivenAp,
        DTerm::AGivenBp,
        DTerm::BGivenBp,
        DTerm::FakeAGivenBp,
    ];

    /// Each domain appears once, as the target of its direction.
    pub const REDUCED: [DTerm; 4] = [
        DTerm::BGivenAp,
        DTerm::FakeBGivenAp,
        DTerm::AGivenBp,
        DTerm::FakeAGivenBp,
    ];

    /// The domain whose label the term is trained towards. Generated images
    /// carry the label of their source domain.
    pub const fn label_domain(self) -> DomainTag {
        match self {
            DTerm::BGivenAp | DTerm::BGivenBp => DomainTag::B,
            DTerm::AGivenAp | DTerm::AGivenBp => DomainTag::A,
            DTerm::FakeBGivenAp => DomainTag::A,
            DTerm::FakeAGivenBp => DomainTag::B,
        }
    }

    pub const fn target(self) -> f64 {
        self.label_domain().label()
    }

    pub const fn name(self) -> &'static str {
        match self {
            DTerm::BGivenAp => "b|a'",
            DTerm::AGivenAp => "a|a'",
            DTerm::FakeBGivenAp => "G_AB(a')|a'",
            DTerm::AGivenBp => "a|b'",
            DTerm::BGivenBp => "b|b'",
            DTerm::FakeAGivenBp => "G_BA(b')|b'",
        }
    }

    /// CSV-safe column name.
    pub const fn column(self) -> &'static str {
        match self {
            DTerm::BGivenAp => "d_b_given_ap",
            DTerm::AGivenAp => "d_a_given_ap",
            DTerm::FakeBGivenAp => "d_gab_given_ap",
            DTerm::AGivenBp => "d_a_given_bp",
            DTerm::BGivenBp => "d_b_given_bp",
            DTerm::FakeAGivenBp => "d_gba_given_bp",
        }
    }

    pub fn from_column(s: &str) -> Option<Self> {
        Self::FULL.into_iter().find(|t| t.column() == s)
    }
}

/// Which set of discriminator terms a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorObjective {
    Full,
    /// Drops the two source-domain real terms (`a|a'`, `b|b'`).
    Reduced,
}

impl DiscriminatorObjective {
    pub fn terms(self) -> &'static [DTerm] {
        match self {
            DiscriminatorObjective::Full => &DTerm::FULL,
            DiscriminatorObjective::Reduced => &DTerm::REDUCED,
        }
    }
}

/// Scalar bookkeeping of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_total: f64,
    pub d_terms: Vec<(DTerm, f64)>,
    pub g_ab_adv: f64,
    pub g_ab_rec: f64,
    pub g_ba_adv: f64,
    pub g_ba_rec: f64,
}

impl LossBreakdown {
    pub fn term(&self, t: DTerm) -> Option<f64> {
        self.d_terms.iter().find(|(k, _)| *k == t).map(|(_, v)| *v)
    }

    pub fn all_finite(&self) -> bool {
        self.d_total.is_finite()
            && self.d_terms.iter().all(|(_, v)| v.is_finite())
            && [self.g_ab_adv, self.g_ab_rec, self.g_ba_adv, self.g_ba_rec]
                .iter()
                .all(|v| v.is_finite())
    }
}

/// Mean binary cross-entropy of raw logits against a constant target, with
/// its gradient w.r.t. the logits.
pub fn bce_with_logits<T: Scalar>(logits: &[T], target: f64) -> (f64, Vec<T>) {
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .map(|&x| {
            let x = x.as_f64();
            total += x.max(0.0) - x * target + libm::log1p(libm::exp(-x.abs()));
            let sig = if x >= 0.0 {
                1.0 / (1.0 + libm::exp(-x))
            } else {
                let e = libm::exp(x);
                e / (1.0 + e)
            };
            T::from_f64((sig - target) / n)
        })
        .collect();
    (total / n, grad)
}

fn check_finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

/// Inputs of one discriminator update. Generated images are plain values:
/// they never carry a generator graph.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorInputs<'a, T> {
    pub a_prime: &'a ImageBatch<T>,
    pub b_prime: &'a ImageBatch<T>,
    pub a_real: &'a ImageBatch<T>,
    pub b_real: &'a ImageBatch<T>,
    /// `G_AB(a')`.
    pub fake_b: &'a Tensor<T>,
    /// `G_BA(b')`.
    pub fake_a: &'a Tensor<T>,
}

#[derive(Debug)]
pub struct DiscriminatorLoss<T> {
    pub total: f64,
    pub terms: Vec<(DTerm, f64)>,
    pub grads: Gradients<T>,
}

fn term_pair<'a, T>(x: &DiscriminatorInputs<'a, T>, t: DTerm) -> (&'a Tensor<T>, &'a Tensor<T>) {
    match t {
        DTerm::BGivenAp => (&x.b_real.data, &x.a_prime.data),
        DTerm::AGivenAp => (&x.a_real.data, &x.a_prime.data),
        DTerm::FakeBGivenAp => (x.fake_b, &x.a_prime.data),
        DTerm::AGivenBp => (&x.a_real.data, &x.b_prime.data),
        DTerm::BGivenBp => (&x.b_real.data, &x.b_prime.data),
        DTerm::FakeAGivenBp => (x.fake_a, &x.b_prime.data),
    }
}

/// Discriminator objective over `terms`, with gradients for the
/// discriminator parameters. All terms run as one stacked batch.
pub fn discriminator_loss_from_generated<T: Scalar>(
    d: &Discriminator<T>,
    inputs: &DiscriminatorInputs<'_, T>,
    terms: &[DTerm],
) -> Result<DiscriminatorLoss<T>> {
    if terms.is_empty() {
        return Err(Error::Config("discriminator objective needs at least one term".into()));
    }
    let shape = inputs.a_prime.data.shape();
    let pairs: Vec<_> = terms.iter().map(|&t| term_pair(inputs, t)).collect();
    for (cand, cond) in &pairs {
        for (axis, i) in [("batch", 0), ("channel", 1), ("height", 2), ("width", 3)] {
            if cand.shape()[i] != shape[i] || cond.shape()[i] != shape[i] {
                return Err(Error::Dimension {
                    axis,
                    expected: shape[i],
                    found: if cand.shape()[i] != shape[i] { cand.shape()[i] } else { cond.shape()[i] },
                });
            }
        }
    }
    let cands: Vec<&Tensor<T>> = pairs.iter().map(|p| p.0).collect();
    let conds: Vec<&Tensor<T>> = pairs.iter().map(|p| p.1).collect();

    let mut tape = Tape::new();
    let cand = tape.input(Tensor::concat_batch(&cands)?, false);
    let cond = tape.input(Tensor::concat_batch(&conds)?, false);
    let logits = d.forward(&mut tape, cand, cond, false)?;

    let per_term = tape.value(logits).len() / terms.len();
    let scale = 1.0 / terms.len() as f64;
    let mut seed = Vec::with_capacity(tape.value(logits).len());
    let mut values = Vec::with_capacity(terms.len());
    let mut total = 0.0;
    for (k, &t) in terms.iter().enumerate() {
        let chunk = &tape.value(logits).data()[k * per_term..(k + 1) * per_term];
        let (v, g) = bce_with_logits(chunk, t.target());
        let v = check_finite(t.name(), v)?;
        total += v * scale;
        values.push((t, v));
        seed.extend(g.into_iter().map(|x| x * T::from_f64(scale)));
    }
    let seed = Tensor::from_vec(tape.shape(logits), seed)?;
    let grads = tape.backward(&[(logits, &seed)]);
    Ok(DiscriminatorLoss {
        total: check_finite("d_total", total)?,
        terms: values,
        grads,
    })
}

/// Discriminator objective with the generated images produced here by the
/// two generators in evaluation mode and detached before use.
pub fn discriminator_loss<T: Scalar>(
    d: &Discriminator<T>,
    g_ab: &Generator<T>,
    g_ba: &Generator<T>,
    a_prime: &ImageBatch<T>,
    b_prime: &ImageBatch<T>,
    a_real: &ImageBatch<T>,
    b_real: &ImageBatch<T>,
    terms: &[DTerm],
) -> Result<DiscriminatorLoss<T>> {
    let fake_b = g_ab.translate(a_prime)?.data;
    let fake_a = g_ba.translate(b_prime)?.data;
    discriminator_loss_from_generated(
        d,
        &DiscriminatorInputs {
            a_prime,
            b_prime,
            a_real,
            b_real,
            fake_b: &fake_b,
            fake_a: &fake_a,
        },
        terms,
    )
}

/// Target the generator pushes its outputs towards: B for `AB`, A for `BA`.
pub const fn generator_target(role: GeneratorRole) -> f64 {
    role.target().label()
}

/// Adversarial loss of a generator given the logits of its conditioned output.
pub fn generator_adversarial_loss<T: Scalar>(logits: &Tensor<T>, role: GeneratorRole) -> (f64, Vec<T>) {
    bce_with_logits(logits.data(), generator_target(role))
}

/// Mean absolute difference and its (sub)gradient w.r.t. `output`.
pub fn reconstruction_loss<T: Scalar>(output: &Tensor<T>, input: &Tensor<T>) -> Result<(f64, Vec<T>)> {
    if output.shape() != input.shape() {
        return Err(Error::Dimension {
            axis: "len",
            expected: input.len(),
            found: output.len(),
        });
    }
    let n = output.len() as f64;
    let g = T::from_f64(1.0 / n);
    let mut total = 0.0;
    let grad = output
        .data()
        .iter()
        .zip(input.data())
        .map(|(&y, &x)| {
            let diff = (y - x).as_f64();
            total += diff.abs();
            if diff > 0.0 {
                g
            } else if diff < 0.0 {
                -g
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((total / n, grad))
}

pub fn total_generator_loss(adv: f64, rec: f64, w: &LossWeights) -> f64 {
    w.lambda_adv * adv + w.lambda_rec * rec
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossValues {
    pub adv: f64,
    pub rec: f64,
    pub total: f64,
}

/// Adds the discriminator pass for a generator output already on `tape` and
/// returns the loss values plus the cotangent seeds for `backward`.
pub fn record_generator_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    d: &'p Discriminator<T>,
    output: Var,
    input: Var,
    role: GeneratorRole,
    w: &LossWeights,
) -> Result<(GeneratorLossValues, Vec<(Var, Tensor<T>)>)> {
    let logits = d.forward(tape, output, input, true)?;
    let (adv, g_adv) = generator_adversarial_loss(tape.value(logits), role);
    let (rec, g_rec) = reconstruction_loss(tape.value(output), tape.value(input))?;
    let adv = check_finite(adv_name(role), adv)?;
    let rec = check_finite(rec_name(role), rec)?;
    let la = T::from_f64(w.lambda_adv);
    let lr = T::from_f64(w.lambda_rec);
    let seeds = alloc::vec![
        (logits, Tensor::from_vec(tape.shape(logits), g_adv.into_iter().map(|g| g * la).collect())?),
        (output, Tensor::from_vec(tape.shape(output), g_rec.into_iter().map(|g| g * lr).collect())?),
    ];
    Ok((
        GeneratorLossValues {
            adv,
            rec,
            total: total_generator_loss(adv, rec, w),
        },
        seeds,
    ))
}

pub const fn adv_name(role: GeneratorRole) -> &'static str {
    match role {
        GeneratorRole::AB => "g_ab_adv",
        GeneratorRole::BA => "g_ba_adv",
    }
}

pub const fn rec_name(role: GeneratorRole) -> &'static str {
    match role {
        GeneratorRole::AB => "g_ab_rec",
        GeneratorRole::BA => "g_ba_rec",
    }
}

/// Generator output, loss values and generator parameter gradients.
#[derive(Debug)]
pub struct GeneratorLoss<T> {
    pub output: Tensor<T>,
    pub values: GeneratorLossValues,
    pub grads: Vec<Tensor<T>>,
}

/// Full objective of one generator on its pool-drawn `input`.
pub fn generator_loss<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    input: &ImageBatch<T>,
    w: &LossWeights,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<GeneratorLoss<T>> {
    let mut tape = Tape::new();
    let x = tape.input(input.data.clone(), false);
    let y = g.forward(&mut tape, x, false, dropout)?;
    let (values, seeds) = record_generator_loss(&mut tape, d, y, x, g.role(), w)?;
    let seed_refs: Vec<(Var, &Tensor<T>)> = seeds.iter().map(|(v, t)| (*v, t)).collect();
    let mut grads = tape.backward(&seed_refs);
    Ok(GeneratorLoss {
        output: tape.value(y).clone(),
        values,
        grads: gradients_for(g.params(), &mut grads),
    })
}
