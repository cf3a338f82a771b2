//! The two task-specific generators (ResNet or UNet), tanh output, no noise input.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainTag, ImageBatch, Provenance};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvGeom, ConvTranspose2d, Init, ParamStore, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub arch: Arch,
    pub base_filters: usize,
    pub n_resnet_blocks: usize,
    pub n_unet_levels: usize,
    pub use_dropout: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl GeneratorConfig {
    /// Full-size ResNet: 6 blocks below 256px, 9 from 256px up.
    pub fn resnet(image_size: usize) -> Self {
        Self {
            arch: Arch::Resnet,
            base_filters: 64,
            n_resnet_blocks: if image_size >= 256 { 9 } else { 6 },
            n_unet_levels: unet_levels_for(image_size),
            use_dropout: false,
            in_channels: 3,
            out_channels: 3,
        }
    }

    /// Full-size UNet whose bottleneck is 1x1.
    pub fn unet(image_size: usize) -> Self {
        Self {
            arch: Arch::Unet,
            ..Self::resnet(image_size)
        }
    }

    /// 8 filters, 2 residual blocks / 2 UNet levels; for 32x32 desk runs.
    pub fn miniature(arch: Arch) -> Self {
        Self {
            arch,
            base_filters: 8,
            n_resnet_blocks: 2,
            n_unet_levels: 2,
            use_dropout: false,
            in_channels: 3,
            out_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        if self.arch == Arch::Unet && self.n_unet_levels == 0 {
            return Err(Error::Config("unet needs at least one level".into()));
        }
        Ok(())
    }

    /// Checks an input edge length against the level/block layout.
    pub fn check_size(&self, size: usize) -> Result<()> {
        let ok = match self.arch {
            Arch::Resnet => size % 4 == 0 && size >= 8,
            Arch::Unet => self.n_unet_levels < usize::BITS as usize && size % (1 << self.n_unet_levels) == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{size}px input is not supported by a {:?} generator with {} levels",
                self.arch,
                match self.arch {
                    Arch::Resnet => 2,
                    Arch::Unet => self.n_unet_levels,
                }
            )))
        }
    }

    /// Bottleneck edge length for `size` input.
    pub fn bottleneck_size(&self, size: usize) -> Result<usize> {
        self.check_size(size)?;
        Ok(match self.arch {
            Arch::Resnet => size / 4,
            Arch::Unet => size >> self.n_unet_levels,
        })
    }
}

/// Number of UNet levels giving a 1x1 bottleneck.
pub fn unet_levels_for(image_size: usize) -> usize {
    image_size.max(1).trailing_zeros() as usize
}

/// Which translation a generator performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneratorRole {
    AB,
    BA,
}

impl GeneratorRole {
    pub const fn source(self) -> DomainTag {
        match self {
            GeneratorRole::AB => DomainTag::A,
            GeneratorRole::BA => DomainTag::B,
        }
    }

    pub const fn target(self) -> DomainTag {
        match self {
            GeneratorRole::AB => DomainTag::B,
            GeneratorRole::BA => DomainTag::A,
        }
    }

    pub const fn inverse(self) -> Self {
        match self {
            GeneratorRole::AB => GeneratorRole::BA,
            GeneratorRole::BA => GeneratorRole::AB,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            GeneratorRole::AB => "AB",
            GeneratorRole::BA => "BA",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Layout {
    Resnet {
        stem: Conv2d,
        down: [Conv2d; 2],
        blocks: Vec<[Conv2d; 2]>,
        up: [ConvTranspose2d; 2],
        head: Conv2d,
    },
    Unet {
        down: Vec<Conv2d>,
        up: Vec<ConvTranspose2d>,
        /// `norm[i]` / `dropout[i]` describe `up[i]`; `down_norm[i]` describes `down[i]`.
        down_norm: Vec<bool>,
        up_norm: Vec<bool>,
        dropout: Vec<bool>,
    },
}

const DROPOUT_P: f64 = 0.5;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Generator<T> {
    cfg: GeneratorConfig,
    role: GeneratorRole,
    params: ParamStore<T>,
    layout: Layout,
}

/// Builds a generator with weights drawn from N(0, 0.02) under `seed`.
pub fn build_generator<T: Scalar>(
    cfg: &GeneratorConfig,
    role: GeneratorRole,
    seed: u64,
) -> Result<Generator<T>> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let mut init = Init::new(seed);
    let f = cfg.base_filters;
    let layout = match cfg.arch {
        Arch::Resnet => {
            let p = &mut params;
            let stem = Conv2d::new(p, &mut init, "stem", cfg.in_channels, f, ConvGeom::reflect(7, 1, 3), false);
            let down = [
                Conv2d::new(p, &mut init, "down0", f, 2 * f, ConvGeom::new(3, 2, 1), false),
                Conv2d::new(p, &mut init, "down1", 2 * f, 4 * f, ConvGeom::new(3, 2, 1), false),
            ];
            let blocks = (0..cfg.n_resnet_blocks)
                .map(|i| {
                    [
                        Conv2d::new(p, &mut init, &format!("block{i}.conv0"), 4 * f, 4 * f, ConvGeom::reflect(3, 1, 1), false),
                        Conv2d::new(p, &mut init, &format!("block{i}.conv1"), 4 * f, 4 * f, ConvGeom::reflect(3, 1, 1), false),
                    ]
                })
                .collect();
            let up = [
                ConvTranspose2d::new(p, &mut init, "up0", 4 * f, 2 * f, ConvGeom::new(3, 2, 1), 1, false),
                ConvTranspose2d::new(p, &mut init, "up1", 2 * f, f, ConvGeom::new(3, 2, 1), 1, false),
            ];
            let head = Conv2d::new(p, &mut init, "head", f, cfg.out_channels, ConvGeom::reflect(7, 1, 3), true);
            Layout::Resnet {
                stem,
                down,
                blocks,
                up,
                head,
            }
        }
        Arch::Unet => {
            let levels = cfg.n_unet_levels;
            let ch = |i: usize| f * (1usize << i.min(3));
            let geom = ConvGeom::new(4, 2, 1);
            let mut down = Vec::with_capacity(levels);
            let mut down_norm = Vec::with_capacity(levels);
            for i in 0..levels {
                let c_in = if i == 0 { cfg.in_channels } else { ch(i - 1) };
                let norm = i != 0 && i != levels - 1;
                down.push(Conv2d::new(&mut params, &mut init, &format!("down{i}"), c_in, ch(i), geom, !norm));
                down_norm.push(norm);
            }
            let mut up = Vec::with_capacity(levels);
            let mut up_norm = Vec::with_capacity(levels);
            let mut dropout = Vec::with_capacity(levels);
            for i in 0..levels {
                let c_in = if i == levels - 1 { ch(i) } else { 2 * ch(i) };
                let c_out = if i == 0 { cfg.out_channels } else { ch(i - 1) };
                let norm = i != 0;
                up.push(ConvTranspose2d::new(&mut params, &mut init, &format!("up{i}"), c_in, c_out, geom, 0, !norm));
                up_norm.push(norm);
                dropout.push(cfg.use_dropout && i != 0 && i != levels - 1 && c_out == 8 * f);
            }
            Layout::Unet {
                down,
                up,
                down_norm,
                up_norm,
                dropout,
            }
        }
    };
    Ok(Generator {
        cfg: *cfg,
        role,
        params,
        layout,
    })
}

impl<T: Scalar> Generator<T> {
    /// Rebuilds the layout for `cfg` and adopts `params`, which must carry
    /// the same names and shapes.
    pub fn with_params(cfg: &GeneratorConfig, role: GeneratorRole, params: &ParamStore<T>) -> Result<Self> {
        let mut g = build_generator(cfg, role, 0)?;
        g.params.load_from(params)?;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn role(&self) -> GeneratorRole {
        self.role
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records the forward pass on `tape`. `dropout` carries the mask RNG in
    /// training mode; `None` is evaluation mode.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        x: Var,
        frozen: bool,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4();
        if c != self.cfg.in_channels {
            return Err(Error::Dimension {
                axis: "channel",
                expected: self.cfg.in_channels,
                found: c,
            });
        }
        if h != w {
            return Err(Error::Dimension {
                axis: "width",
                expected: h,
                found: w,
            });
        }
        self.cfg.check_size(h)?;
        let p = &self.params;
        match &self.layout {
            Layout::Resnet {
                stem,
                down,
                blocks,
                up,
                head,
            } => {
                let mut y = stem.forward(tape, p, frozen, x)?;
                y = tape.instance_norm(y);
                y = tape.relu(y);
                for d in down {
                    y = d.forward(tape, p, frozen, y)?;
                    y = tape.instance_norm(y);
                    y = tape.relu(y);
                }
                for [c0, c1] in blocks {
                    let mut r = c0.forward(tape, p, frozen, y)?;
                    r = tape.instance_norm(r);
                    r = tape.relu(r);
                    if self.cfg.use_dropout {
                        if let Some(rng) = dropout.as_deref_mut() {
                            r = tape.dropout(r, DROPOUT_P, rng);
                        }
                    }
                    r = c1.forward(tape, p, frozen, r)?;
                    r = tape.instance_norm(r);
                    y = tape.add(y, r)?;
                }
                for u in up {
                    y = u.forward(tape, p, frozen, y)?;
                    y = tape.instance_norm(y);
                    y = tape.relu(y);
                }
                let y = head.forward(tape, p, frozen, y)?;
                Ok(tape.tanh(y))
            }
            Layout::Unet {
                down,
                up,
                down_norm,
                up_norm,
                dropout: drop_flags,
            } => {
                let levels = down.len();
                let mut skips = Vec::with_capacity(levels);
                let mut y = x;
                for (i, (d, &norm)) in down.iter().zip(down_norm).enumerate() {
                    if i > 0 {
                        y = tape.leaky_relu(y, LEAKY_SLOPE);
                    }
                    y = d.forward(tape, p, frozen, y)?;
                    if norm {
                        y = tape.instance_norm(y);
                    }
                    skips.push(y);
                }
                for i in (0..levels).rev() {
                    if i != levels - 1 {
                        y = tape.concat_channels(skips[i], y)?;
                    }
                    y = tape.relu(y);
                    y = up[i].forward(tape, p, frozen, y)?;
                    if up_norm[i] {
                        y = tape.instance_norm(y);
                    }
                    if drop_flags[i] {
                        if let Some(rng) = dropout.as_deref_mut() {
                            y = tape.dropout(y, DROPOUT_P, rng);
                        }
                    }
                }
                Ok(tape.tanh(y))
            }
        }
    }

    /// Evaluation-mode translation of a batch from the source domain.
    pub fn translate(&self, x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
        let mut tape = Tape::new();
        let xv = tape.input(x.data.clone(), false);
        let y = self.forward(&mut tape, xv, true, None)?;
        let n = x.len();
        Ok(ImageBatch {
            data: tape.value(y).clone(),
            domain: self.role.target(),
            provenance: alloc::vec![Provenance::Generated; n],
        })
    }
}
