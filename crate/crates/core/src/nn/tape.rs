//! Reverse-mode differentiation over a linear record of tensor ops.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{self, ConvDims, ConvGeom};
use super::params::{ParamKey, ParamRef};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<'p, T> {
    Input,
    Conv {
        x: Var,
        w: ParamRef<'p, T>,
        b: Option<ParamRef<'p, T>>,
        geom: ConvGeom,
        dims: ConvDims,
    },
    ConvTranspose {
        x: Var,
        w: ParamRef<'p, T>,
        b: Option<ParamRef<'p, T>>,
        geom: ConvGeom,
        dims: ConvDims,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Dropout(Var, Vec<T>),
    Add(Var, Var),
    Concat(Var, Var),
}

struct Node<'p, T> {
    value: Tensor<T>,
    op: Op<'p, T>,
    needs_grad: bool,
}

/// Records a forward pass; `'p` is the lifetime of the borrowed parameters.
pub struct Tape<'p, T> {
    nodes: Vec<Node<'p, T>>,
}

/// Gradients from one backward pass, keyed by parameter and by tracked input.
#[derive(Debug)]
pub struct Gradients<T> {
    params: BTreeMap<ParamKey, Tensor<T>>,
    inputs: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor<T>> {
        self.params.get(&key)
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v)
    }

    pub fn take_param(&mut self, key: ParamKey) -> Option<Tensor<T>> {
        self.params.remove(&key)
    }

    pub fn param_keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<'p, T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Adds a constant; with `track` its gradient is reported by `backward`.
    pub fn input(&mut self, value: Tensor<T>, track: bool) -> Var {
        self.push(value, Op::Input, track)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: ParamRef<'p, T>,
        b: Option<ParamRef<'p, T>>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = w.tensor.shape();
        if ws[1] != c {
            return Err(Error::Dimension {
                axis: "channel",
                expected: ws[1],
                found: c,
            });
        }
        if geom.padding == kernels::Padding::Reflect && (geom.pad >= h || geom.pad >= wd) {
            return Err(Error::Config("reflection pad wider than the feature map".into()));
        }
        let (ho, wo) = match (geom.out_size(h), geom.out_size(wd)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Dimension {
                    axis: "height",
                    expected: geom.kernel,
                    found: h + 2 * geom.pad,
                })
            }
        };
        let dims = ConvDims {
            n,
            c_in: c,
            c_out: ws[0],
            h,
            w: wd,
            ho,
            wo,
        };
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            w.tensor.data(),
            b.map(|b| b.tensor.data()),
            &dims,
            &geom,
        );
        let value = Tensor::from_vec(&[n, dims.c_out, ho, wo], data)?;
        let needs = self.needs(x) || !w.frozen;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                dims,
            },
            needs,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: ParamRef<'p, T>,
        b: Option<ParamRef<'p, T>>,
        geom: ConvGeom,
        output_padding: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = w.tensor.shape();
        if ws[0] != c {
            return Err(Error::Dimension {
                axis: "channel",
                expected: ws[0],
                found: c,
            });
        }
        let bad = || Error::Config("transposed convolution output would be empty".into());
        let ho = geom.transposed_out_size(h, output_padding).ok_or_else(bad)?;
        let wo = geom.transposed_out_size(wd, output_padding).ok_or_else(bad)?;
        let dims = ConvDims {
            n,
            c_in: c,
            c_out: ws[1],
            h,
            w: wd,
            ho,
            wo,
        };
        let data = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            w.tensor.data(),
            b.map(|b| b.tensor.data()),
            &dims,
            &geom,
        );
        let value = Tensor::from_vec(&[n, dims.c_out, ho, wo], data)?;
        let needs = self.needs(x) || !w.frozen;
        Ok(self.push(
            value,
            Op::ConvTranspose {
                x,
                w,
                b,
                geom,
                dims,
            },
            needs,
        ))
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let plane = shape[2] * shape[3];
        let (y, inv_std) = kernels::instance_norm_forward(self.value(x).data(), plane);
        let value = Tensor::from_vec(&shape, y).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::InstanceNorm { x, inv_std }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * s });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu(x, s), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs)
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        let keep = T::from_f64(1.0 / (1.0 - p));
        let len = self.value(x).len();
        let mask: Vec<T> = (0..len)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let needs = self.needs(x);
        self.push(value, Op::Dropout(x, mask), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                axis: "len",
                expected: self.value(a).len(),
                found: self.value(b).len(),
            });
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        for (axis, x, y) in [("batch", na, nb), ("height", ha, hb), ("width", wa, wb)] {
            if x != y {
                return Err(Error::Dimension {
                    axis,
                    expected: x,
                    found: y,
                });
            }
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for i in 0..na {
            data.extend_from_slice(self.value(a).item(i));
            data.extend_from_slice(self.value(b).item(i));
        }
        let value = Tensor::from_vec(&[na, ca + cb, ha, wa], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat(a, b), needs))
    }

    /// Propagates the given output cotangents back to parameters and
    /// tracked inputs.
    pub fn backward(&self, seeds: &[(Var, &Tensor<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients {
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };
        for &(v, seed) in seeds {
            assert_eq!(self.shape(v), seed.shape(), "seed shape");
            accumulate(&mut grads[v.0], seed.clone());
        }
        let last = seeds.iter().map(|s| s.0 .0).max().unwrap_or(0);

        for idx in (0..=last).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {
                    out.inputs.insert(Var(idx), dy);
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    dims,
                } => {
                    let mut dw = (!w.frozen).then(|| Tensor::zeros(w.tensor.shape()));
                    let mut db = b
                        .filter(|b| !b.frozen)
                        .map(|b| Tensor::zeros(b.tensor.shape()));
                    let dx = kernels::conv2d_backward(
                        self.value(*x).data(),
                        w.tensor.data(),
                        dy.data(),
                        dims,
                        geom,
                        self.needs(*x),
                        dw.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    self.deposit(&mut grads, &mut out, *x, dx, *w, *b, dw, db);
                }
                Op::ConvTranspose {
                    x,
                    w,
                    b,
                    geom,
                    dims,
                } => {
                    let mut dw = (!w.frozen).then(|| Tensor::zeros(w.tensor.shape()));
                    let mut db = b
                        .filter(|b| !b.frozen)
                        .map(|b| Tensor::zeros(b.tensor.shape()));
                    let dx = kernels::conv_transpose2d_backward(
                        self.value(*x).data(),
                        w.tensor.data(),
                        dy.data(),
                        dims,
                        geom,
                        self.needs(*x),
                        dw.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                    self.deposit(&mut grads, &mut out, *x, dx, *w, *b, dw, db);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let s = node.value.shape();
                    let dx = kernels::instance_norm_backward(
                        node.value.data(),
                        inv_std,
                        dy.data(),
                        s[2] * s[3],
                    );
                    self.send(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = zip_map(node.value.data(), dy.data(), |y, g| {
                        if y > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    });
                    self.send(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, s) => {
                    let s = *s;
                    let dx = zip_map(self.value(*x).data(), dy.data(), |xv, g| {
                        if xv > T::zero() {
                            g
                        } else {
                            g * s
                        }
                    });
                    self.send(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = zip_map(node.value.data(), dy.data(), |y, g| g * (T::one() - y * y));
                    self.send(&mut grads, *x, dx);
                }
                Op::Dropout(x, mask) => {
                    let dx = zip_map(mask, dy.data(), |m, g| m * g);
                    self.send(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        self.send(&mut grads, *b, dy.data().to_vec());
                    }
                    self.send(&mut grads, *a, dy.into_data());
                }
                Op::Concat(a, b) => {
                    let ca = self.shape(*a)[1];
                    let cb = self.shape(*b)[1];
                    let plane = node.value.shape()[2] * node.value.shape()[3];
                    let n = node.value.shape()[0];
                    let mut da = Vec::with_capacity(n * ca * plane);
                    let mut dbv = Vec::with_capacity(n * cb * plane);
                    for i in 0..n {
                        let item = dy.item(i);
                        da.extend_from_slice(&item[..ca * plane]);
                        dbv.extend_from_slice(&item[ca * plane..]);
                    }
                    self.send(&mut grads, *a, da);
                    self.send(&mut grads, *b, dbv);
                }
            }
        }
        out
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], to: Var, g: Vec<T>) {
        if !self.needs(to) {
            return;
        }
        let t = Tensor::from_vec(self.shape(to), g).expect("gradient shape");
        accumulate(&mut grads[to.0], t);
    }

    #[allow(clippy::too_many_arguments)]
    fn deposit(
        &self,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
        x: Var,
        dx: Option<Vec<T>>,
        w: ParamRef<'p, T>,
        b: Option<ParamRef<'p, T>>,
        dw: Option<Tensor<T>>,
        db: Option<Tensor<T>>,
    ) {
        if let Some(dx) = dx {
            self.send(grads, x, dx);
        }
        if let Some(dw) = dw {
            accumulate_param(&mut out.params, w.key, dw);
        }
        if let (Some(b), Some(db)) = (b, db) {
            accumulate_param(&mut out.params, b.key, db);
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn accumulate_param<T: Scalar>(map: &mut BTreeMap<ParamKey, Tensor<T>>, key: ParamKey, g: Tensor<T>) {
    match map.get_mut(&key) {
        Some(existing) => existing.add_assign(&g),
        None => {
            map.insert(key, g);
        }
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
    out
}
