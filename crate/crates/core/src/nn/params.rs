use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_NET: AtomicU32 = AtomicU32::new(1);

/// Process-unique identity of one parameter set.
///
/// Two networks never share an id, including clones and deserialized copies,
/// so their gradients can be told apart when both sit on one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetId(u32);

impl NetId {
    pub fn fresh() -> Self {
        Self(NEXT_NET.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub net: NetId,
    pub index: usize,
}

/// Borrowed parameter handed to a tape op.
#[derive(Debug, Clone, Copy)]
pub struct ParamRef<'p, T> {
    pub key: ParamKey,
    pub tensor: &'p Tensor<T>,
    /// Frozen parameters get no gradient.
    pub frozen: bool,
}

/// Named, ordered parameter tensors of one network.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamStore<T> {
    #[serde(skip, default = "NetId::fresh")]
    id: NetId,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Clone> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: NetId::fresh(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NetId::fresh(),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn id(&self) -> NetId {
        self.id
    }

    pub fn push(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn param(&self, index: usize, frozen: bool) -> ParamRef<'_, T> {
        ParamRef {
            key: ParamKey {
                net: self.id,
                index,
            },
            tensor: &self.tensors[index],
            frozen,
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces all values, keeping the identity. Shapes must match.
    pub fn load_from(&mut self, other: &Self) -> crate::Result<()> {
        if self.names != other.names {
            return Err(crate::Error::Contract("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(crate::Error::Contract("parameter shapes differ".into()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Gaussian weights with mean 0 and the given std.
    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut self.rng)))
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.rng.random_range(-bound..bound)))
    }
}
