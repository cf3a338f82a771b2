//! Minimal differentiable building blocks for the convolutional networks.

pub mod kernels;
pub mod layers;
pub mod params;
pub mod tape;

pub use kernels::{ConvGeom, Padding};
pub use layers::{Conv2d, ConvTranspose2d};
pub use params::{Init, NetId, ParamKey, ParamRef, ParamStore};
pub use tape::{Gradients, Tape, Var};

use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Collects one network's parameter gradients in store order, zero-filling
/// parameters the pass never reached.
pub fn gradients_for<T: Scalar>(store: &ParamStore<T>, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
    (0..store.len())
        .map(|i| {
            let key = ParamKey {
                net: store.id(),
                index: i,
            };
            grads
                .take_param(key)
                .unwrap_or_else(|| Tensor::zeros(store.get(i).shape()))
        })
        .collect()
}
