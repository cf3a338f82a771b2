//! Convolution and normalization kernels on single images (`c x h x w`).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Zero,
    Reflect,
}

/// Square kernel geometry of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
            padding: Padding::Zero,
        }
    }

    pub fn reflect(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
            padding: Padding::Reflect,
        }
    }

    /// Output extent of a convolution over `size` input pixels, if positive.
    pub fn out_size(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_out_size(&self, size: usize, output_padding: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel + output_padding).checked_sub(2 * self.pad)
    }

    #[inline]
    fn source(&self, padded: isize, size: usize) -> Option<usize> {
        let n = size as isize;
        if (0..n).contains(&padded) {
            return Some(padded as usize);
        }
        match self.padding {
            Padding::Zero => None,
            Padding::Reflect => {
                let r = if padded < 0 { -padded } else { 2 * (n - 1) - padded };
                debug_assert!((0..n).contains(&r), "reflection pad wider than image");
                Some(r as usize)
            }
        }
    }
}

/// Unfolds `src` (`c x h x w`) into `dst` (`c*k*k x ho*wo`).
pub fn im2col<T: Scalar>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeom,
    (ho, wo): (usize, usize),
    dst: &mut [T],
) {
    let k = geom.kernel;
    let l = ho * wo;
    debug_assert_eq!(dst.len(), c * k * k * l);
    // Column index tables are shared by every channel.
    let rows: Vec<Option<usize>> = (0..k)
        .flat_map(|ki| (0..ho).map(move |oh| (ki, oh)))
        .map(|(ki, oh)| geom.source((oh * geom.stride + ki) as isize - geom.pad as isize, h))
        .collect();
    let cols: Vec<Option<usize>> = (0..k)
        .flat_map(|kj| (0..wo).map(move |ow| (kj, ow)))
        .map(|(kj, ow)| geom.source((ow * geom.stride + kj) as isize - geom.pad as isize, w))
        .collect();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * l;
                let out = &mut dst[row..row + l];
                for oh in 0..ho {
                    let o = &mut out[oh * wo..(oh + 1) * wo];
                    match rows[ki * ho + oh] {
                        None => o.iter_mut().for_each(|v| *v = T::zero()),
                        Some(ih) => {
                            let line = &plane[ih * w..(ih + 1) * w];
                            let tbl = &cols[kj * wo..(kj + 1) * wo];
                            for (v, iw) in o.iter_mut().zip(tbl) {
                                *v = match iw {
                                    Some(iw) => line[*iw],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dst` (`c x h x w`).
pub fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeom,
    (ho, wo): (usize, usize),
    dst: &mut [T],
) {
    let k = geom.kernel;
    let l = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * l);
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * l;
                for oh in 0..ho {
                    let ih = (oh * geom.stride + ki) as isize - geom.pad as isize;
                    let Some(ih) = geom.source(ih, h) else {
                        continue;
                    };
                    for ow in 0..wo {
                        let iw = (ow * geom.stride + kj) as isize - geom.pad as isize;
                        if let Some(iw) = geom.source(iw, w) {
                            plane[ih * w + iw] += cols[row + oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Shape bookkeeping shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

/// `y = conv(x, weight) + bias` with `weight` laid out `c_out x c_in x k x k`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
    geom: &ConvGeom,
) -> Vec<T> {
    let k = geom.kernel;
    let ckk = d.c_in * k * k;
    let l = d.ho * d.wo;
    let mut cols = vec![T::zero(); ckk * l];
    let mut out = vec![T::zero(); d.n * d.c_out * l];
    for i in 0..d.n {
        let xi = &x[i * d.c_in * d.h * d.w..(i + 1) * d.c_in * d.h * d.w];
        im2col(xi, (d.c_in, d.h, d.w), geom, (d.ho, d.wo), &mut cols);
        let yi = &mut out[i * d.c_out * l..(i + 1) * d.c_out * l];
        T::gemm(
            d.c_out,
            ckk,
            l,
            T::one(),
            weight,
            (ckk as isize, 1),
            &cols,
            (l as isize, 1),
            T::zero(),
            yi,
            (l as isize, 1),
        );
        if let Some(b) = bias {
            for (co, plane) in yi.chunks_exact_mut(l).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]. Returns `dx` when requested and
/// accumulates into `dweight` / `dbias` when given.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvDims,
    geom: &ConvGeom,
    want_dx: bool,
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) -> Option<Vec<T>> {
    let k = geom.kernel;
    let ckk = d.c_in * k * k;
    let l = d.ho * d.wo;
    let in_len = d.c_in * d.h * d.w;
    let mut cols = vec![T::zero(); ckk * l];
    let mut dx = want_dx.then(|| vec![T::zero(); d.n * in_len]);

    if let Some(db) = dbias {
        for i in 0..d.n {
            let dyi = &dy[i * d.c_out * l..(i + 1) * d.c_out * l];
            for (co, plane) in dyi.chunks_exact(l).enumerate() {
                db[co] += plane.iter().fold(T::zero(), |s, &v| s + v);
            }
        }
    }
    if let Some(dw) = dweight {
        for i in 0..d.n {
            let xi = &x[i * in_len..(i + 1) * in_len];
            im2col(xi, (d.c_in, d.h, d.w), geom, (d.ho, d.wo), &mut cols);
            let dyi = &dy[i * d.c_out * l..(i + 1) * d.c_out * l];
            // dW += dY * cols^T
            T::gemm(
                d.c_out,
                l,
                ckk,
                T::one(),
                dyi,
                (l as isize, 1),
                &cols,
                (1, l as isize),
                T::one(),
                dw,
                (ckk as isize, 1),
            );
        }
    }
    if let Some(dx) = dx.as_mut() {
        for i in 0..d.n {
            let dyi = &dy[i * d.c_out * l..(i + 1) * d.c_out * l];
            // dcols = W^T * dY
            T::gemm(
                ckk,
                d.c_out,
                l,
                T::one(),
                weight,
                (1, ckk as isize),
                dyi,
                (l as isize, 1),
                T::zero(),
                &mut cols,
                (l as isize, 1),
            );
            col2im(
                &cols,
                (d.c_in, d.h, d.w),
                geom,
                (d.ho, d.wo),
                &mut dx[i * in_len..(i + 1) * in_len],
            );
        }
    }
    dx
}

/// Transposed convolution with `weight` laid out `c_in x c_out x k x k`.
///
/// In `d`, `(h, w)` is the input extent and `(ho, wo)` the (larger) output.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
    geom: &ConvGeom,
) -> Vec<T> {
    let k = geom.kernel;
    let okk = d.c_out * k * k;
    let l = d.h * d.w;
    let out_len = d.c_out * d.ho * d.wo;
    let mut cols = vec![T::zero(); okk * l];
    let mut out = vec![T::zero(); d.n * out_len];
    for i in 0..d.n {
        let xi = &x[i * d.c_in * l..(i + 1) * d.c_in * l];
        // cols = W^T * x
        T::gemm(
            okk,
            d.c_in,
            l,
            T::one(),
            weight,
            (1, okk as isize),
            xi,
            (l as isize, 1),
            T::zero(),
            &mut cols,
            (l as isize, 1),
        );
        let yi = &mut out[i * out_len..(i + 1) * out_len];
        col2im(&cols, (d.c_out, d.ho, d.wo), geom, (d.h, d.w), yi);
        if let Some(b) = bias {
            for (co, plane) in yi.chunks_exact_mut(d.ho * d.wo).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvDims,
    geom: &ConvGeom,
    want_dx: bool,
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) -> Option<Vec<T>> {
    let k = geom.kernel;
    let okk = d.c_out * k * k;
    let l = d.h * d.w;
    let out_len = d.c_out * d.ho * d.wo;
    if let Some(db) = dbias {
        for i in 0..d.n {
            let dyi = &dy[i * out_len..(i + 1) * out_len];
            for (co, plane) in dyi.chunks_exact(d.ho * d.wo).enumerate() {
                db[co] += plane.iter().fold(T::zero(), |s, &v| s + v);
            }
        }
    }
    if dweight.is_none() && !want_dx {
        return None;
    }
    let mut dweight = dweight;
    let mut cols = vec![T::zero(); okk * l];
    let mut dx = want_dx.then(|| vec![T::zero(); d.n * d.c_in * l]);
    for i in 0..d.n {
        let dyi = &dy[i * out_len..(i + 1) * out_len];
        im2col(dyi, (d.c_out, d.ho, d.wo), geom, (d.h, d.w), &mut cols);
        if let Some(dw) = dweight.as_deref_mut() {
            let xi = &x[i * d.c_in * l..(i + 1) * d.c_in * l];
            // dW += x * cols^T
            T::gemm(
                d.c_in,
                l,
                okk,
                T::one(),
                xi,
                (l as isize, 1),
                &cols,
                (1, l as isize),
                T::one(),
                dw,
                (okk as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                d.c_in,
                okk,
                l,
                T::one(),
                weight,
                (okk as isize, 1),
                &cols,
                (l as isize, 1),
                T::zero(),
                &mut dx[i * d.c_in * l..(i + 1) * d.c_in * l],
                (l as isize, 1),
            );
        }
    }
    dx
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-(sample, channel) normalization over `plane` pixels. Returns the
/// normalized values and the inverse standard deviations.
pub fn instance_norm_forward<T: Scalar>(x: &[T], plane: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let inv_n = T::one() / T::from_f64(plane as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / plane);
    for (src, dst) in x.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
        let mean = src.iter().fold(T::zero(), |s, &v| s + v) * inv_n;
        let var = src.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

pub fn instance_norm_backward<T: Scalar>(y: &[T], inv_std: &[T], dy: &[T], plane: usize) -> Vec<T> {
    let inv_n = T::one() / T::from_f64(plane as f64);
    let mut dx = vec![T::zero(); y.len()];
    for (((yp, dyp), dxp), &is) in y
        .chunks_exact(plane)
        .zip(dy.chunks_exact(plane))
        .zip(dx.chunks_exact_mut(plane))
        .zip(inv_std)
    {
        let mean_dy = dyp.iter().fold(T::zero(), |s, &v| s + v) * inv_n;
        let mean_dyy = dyp
            .iter()
            .zip(yp)
            .fold(T::zero(), |s, (&g, &v)| s + g * v)
            * inv_n;
        for ((o, &g), &v) in dxp.iter_mut().zip(dyp).zip(yp) {
            *o = is * (g - mean_dy - v * mean_dyy);
        }
    }
    dx
}
