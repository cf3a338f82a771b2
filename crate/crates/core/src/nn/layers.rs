use alloc::format;

use serde::{Deserialize, Serialize};

use super::kernels::ConvGeom;
use super::params::{Init, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Init std for convolution weights.
pub const WEIGHT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let k = geom.kernel;
        let weight = store.push(
            format!("{name}.weight"),
            init.normal(&[c_out, c_in, k, k], WEIGHT_STD),
        );
        let bias = bias.then(|| store.push(format!("{name}.bias"), crate::Tensor::zeros(&[c_out])));
        Self { weight, bias, geom }
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        frozen: bool,
        x: Var,
    ) -> Result<Var> {
        tape.conv2d(
            x,
            store.param(self.weight, frozen),
            self.bias.map(|b| store.param(b, frozen)),
            self.geom,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub geom: ConvGeom,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        output_padding: usize,
        bias: bool,
    ) -> Self {
        let k = geom.kernel;
        let weight = store.push(
            format!("{name}.weight"),
            init.normal(&[c_in, c_out, k, k], WEIGHT_STD),
        );
        let bias = bias.then(|| store.push(format!("{name}.bias"), crate::Tensor::zeros(&[c_out])));
        Self {
            weight,
            bias,
            geom,
            output_padding,
        }
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        frozen: bool,
        x: Var,
    ) -> Result<Var> {
        tape.conv_transpose2d(
            x,
            store.param(self.weight, frozen),
            self.bias.map(|b| store.param(b, frozen)),
            self.geom,
            self.output_padding,
        )
    }
}
