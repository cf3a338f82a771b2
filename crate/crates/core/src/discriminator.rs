//! The single conditional PatchGAN discriminator shared by both directions.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvGeom, Init, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_filters: usize,
    pub n_layers: usize,
    /// Candidate plus condition channels.
    pub in_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            n_layers: 3,
            in_channels: 6,
        }
    }
}

impl DiscriminatorConfig {
    pub fn miniature() -> Self {
        Self {
            base_filters: 8,
            n_layers: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.in_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "discriminator input must be candidate + condition channels, got {}",
                self.in_channels
            )));
        }
        if self.base_filters == 0 || self.n_layers == 0 {
            return Err(Error::Config("discriminator widths and depth must be positive".into()));
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        self.in_channels / 2
    }

    /// Edge length of the logit grid for a `size x size` input.
    pub fn patch_grid(&self, size: usize) -> Option<usize> {
        let stride2 = ConvGeom::new(4, 2, 1);
        let stride1 = ConvGeom::new(4, 1, 1);
        let mut s = size;
        for _ in 0..self.n_layers {
            s = stride2.out_size(s).filter(|&v| v > 0)?;
        }
        s = stride1.out_size(s)?;
        stride1.out_size(s).filter(|&v| v > 0)
    }
}

/// `n x 1 x h_p x w_p` raw logits.
pub type PatchLogits<T> = Tensor<T>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Discriminator<T> {
    cfg: DiscriminatorConfig,
    params: ParamStore<T>,
    layers: Vec<Conv2d>,
}

pub fn build_discriminator<T: Scalar>(cfg: &DiscriminatorConfig, seed: u64) -> Result<Discriminator<T>> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let mut init = Init::new(seed);
    let f = cfg.base_filters;
    let width = |i: usize| f * (1usize << i.min(3));
    let mut layers = Vec::with_capacity(cfg.n_layers + 2);
    layers.push(Conv2d::new(&mut params, &mut init, "conv0", cfg.in_channels, f, ConvGeom::new(4, 2, 1), true));
    for i in 1..cfg.n_layers {
        layers.push(Conv2d::new(
            &mut params,
            &mut init,
            &format!("conv{i}"),
            width(i - 1),
            width(i),
            ConvGeom::new(4, 2, 1),
            false,
        ));
    }
    let n = cfg.n_layers;
    layers.push(Conv2d::new(
        &mut params,
        &mut init,
        &format!("conv{n}"),
        width(n - 1),
        width(n),
        ConvGeom::new(4, 1, 1),
        false,
    ));
    layers.push(Conv2d::new(&mut params, &mut init, "head", width(n), 1, ConvGeom::new(4, 1, 1), true));
    Ok(Discriminator { cfg: *cfg, params, layers })
}

impl<T: Scalar> Discriminator<T> {
    pub fn with_params(cfg: &DiscriminatorConfig, params: &ParamStore<T>) -> Result<Self> {
        let mut d = build_discriminator(cfg, 0)?;
        d.params.load_from(params)?;
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Logits for `candidate` conditioned on `condition`; the two are
    /// concatenated (candidate first) along channels.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        candidate: Var,
        condition: Var,
        frozen: bool,
    ) -> Result<Var> {
        let cs = tape.shape(candidate).to_vec();
        let ds = tape.shape(condition).to_vec();
        for (axis, i) in [("batch", 0), ("channel", 1), ("height", 2), ("width", 3)] {
            if cs[i] != ds[i] {
                return Err(Error::Dimension {
                    axis,
                    expected: cs[i],
                    found: ds[i],
                });
            }
        }
        if cs[1] != self.cfg.image_channels() {
            return Err(Error::Dimension {
                axis: "channel",
                expected: self.cfg.image_channels(),
                found: cs[1],
            });
        }
        if self.cfg.patch_grid(cs[2].min(cs[3])).is_none() {
            return Err(Error::Config(format!("{}px input too small for the patch discriminator", cs[2])));
        }
        let p = &self.params;
        let mut y = tape.concat_channels(candidate, condition)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            y = layer.forward(tape, p, frozen, y)?;
            if i == last {
                break;
            }
            if i > 0 {
                y = tape.instance_norm(y);
            }
            y = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        Ok(y)
    }

    pub fn discriminate(&self, candidate: &ImageBatch<T>, condition: &ImageBatch<T>) -> Result<PatchLogits<T>> {
        let mut tape = Tape::new();
        let c = tape.input(candidate.data.clone(), false);
        let d = tape.input(condition.data.clone(), false);
        let y = self.forward(&mut tape, c, d, true)?;
        Ok(tape.value(y).clone())
    }
}
