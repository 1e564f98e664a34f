//! Dense NCHW tensors and the element-wise kernels shared by every layer.
//!
//! All kernels are pure functions writing freshly allocated outputs, with a
//! fixed per-element summation order, so repeated runs are bit-identical.
//! Long reductions accumulate in f64 even for f32 tensors.

use crate::error::{Error, Result};

/// Element dtype tag as stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn byte(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Dtype> {
        match b {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Scalar element of a [`Tensor`]. f32 for training and inference, f64 for
/// gradient checks and oracle paths.
pub trait Elem:
    Copy + Default + PartialEq + PartialOrd + Send + Sync + std::fmt::Debug + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Elem for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// (N, C, H, W) extents of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Scalar shape used by losses.
    pub fn scalar() -> Shape {
        Shape::new(1, 1, 1, 1)
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::scalar()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 array in NCHW layout, contiguous row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Elem> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Elem> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.numel() {
            return Err(Error::config(format!(
                "tensor data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Tensor<T> {
        Tensor { shape, data: vec![T::default(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Tensor<T> {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: T) -> Tensor<T> {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Tensor<T> {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Fixed-order sum of all elements in f64.
    pub fn sum_f64(&self) -> f64 {
        let mut acc = 0.0f64;
        for &v in &self.data {
            acc += v.to_f64();
        }
        acc
    }

    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "{op}: shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "add")?;
        let data =
            self.data.iter().zip(&other.data).map(|(&a, &b)| T::from_f64(a.to_f64() + b.to_f64()));
        Ok(Tensor { shape: self.shape, data: data.collect() })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "sub")?;
        let data =
            self.data.iter().zip(&other.data).map(|(&a, &b)| T::from_f64(a.to_f64() - b.to_f64()));
        Ok(Tensor { shape: self.shape, data: data.collect() })
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        self.map(|v| T::from_f64(v.to_f64() * factor))
    }

    /// Accumulate `other` into `self` element-wise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }
}

/// Element-wise product of two same-shape tensors (the star operation).
pub fn star_product<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "star_product: shape mismatch {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| T::from_f64(x.to_f64() * y.to_f64()));
    Ok(Tensor { shape: a.shape(), data: data.collect() })
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.39894228040143267794;

/// Standard normal CDF, exact erf form.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Element-wise GELU, x * Phi(x) with the exact standard-normal CDF.
pub fn gelu<T: Elem>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::from_f64(gelu_scalar(v.to_f64())))
}

/// Sub-pixel rearrangement: (N, C, H, W) -> (N, C/r^2, rH, rW) with
/// out[n, c, r*h + i, r*w + j] = in[n, c*r^2 + i*r + j, h, w].
pub fn pixel_shuffle<T: Elem>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::config("pixel_shuffle: r must be positive"));
    }
    let s = input.shape();
    if s.c % (r * r) != 0 {
        return Err(Error::config(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        )));
    }
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..out_shape.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    for i in 0..r {
                        for j in 0..r {
                            let v = input.at(n, c * r * r + i * r + j, y, x);
                            let idx = out.index(n, c, y * r + i, x * r + j);
                            out.data[idx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; used as its gradient permutation.
pub fn pixel_unshuffle<T: Elem>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::config("pixel_unshuffle: r must be positive"));
    }
    let s = input.shape();
    if s.h % r != 0 || s.w % r != 0 {
        return Err(Error::config(format!(
            "pixel_unshuffle: spatial dims {}x{} not divisible by r = {}",
            s.h, s.w, r
        )));
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_shape.h {
                for x in 0..out_shape.w {
                    for i in 0..r {
                        for j in 0..r {
                            let v = input.at(n, c, y * r + i, x * r + j);
                            let idx = out.index(n, c * r * r + i * r + j, y, x);
                            out.data[idx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel channel standardization with learnable affine.
///
/// At each (n, h, w): subtract the channel mean, divide by
/// sqrt(channel variance + eps), then apply gamma * x + beta per channel.
pub fn pixel_norm<T: Elem>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = input.shape();
    if gamma.numel() != s.c || beta.numel() != s.c {
        return Err(Error::config(format!(
            "pixel_norm: gamma/beta must have {} elements, got {}/{}",
            s.c,
            gamma.numel(),
            beta.numel()
        )));
    }
    let mut out = Tensor::zeros(s);
    let c = s.c;
    let plane = s.h * s.w;
    for n in 0..s.n {
        for p in 0..plane {
            let mut mean = 0.0f64;
            for ch in 0..c {
                mean += input.data[(n * c + ch) * plane + p].to_f64();
            }
            mean /= c as f64;
            let mut var = 0.0f64;
            for ch in 0..c {
                let d = input.data[(n * c + ch) * plane + p].to_f64() - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for ch in 0..c {
                let xhat = (input.data[(n * c + ch) * plane + p].to_f64() - mean) * inv;
                let y = gamma.data[ch].to_f64() * xhat + beta.data[ch].to_f64();
                out.data[(n * c + ch) * plane + p] = T::from_f64(y);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`pixel_norm`] w.r.t. input, gamma and beta.
pub fn pixel_norm_backward<T: Elem>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(Error::config("pixel_norm_backward: grad shape mismatch"));
    }
    let c = s.c;
    let plane = s.h * s.w;
    let mut gx = Tensor::zeros(s);
    let mut ggamma = vec![0.0f64; c];
    let mut gbeta = vec![0.0f64; c];
    let mut xhat = vec![0.0f64; c];
    let mut gxhat = vec![0.0f64; c];
    for n in 0..s.n {
        for p in 0..plane {
            let mut mean = 0.0f64;
            for ch in 0..c {
                mean += input.data[(n * c + ch) * plane + p].to_f64();
            }
            mean /= c as f64;
            let mut var = 0.0f64;
            for ch in 0..c {
                let d = input.data[(n * c + ch) * plane + p].to_f64() - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let mut mean_g = 0.0f64;
            let mut mean_gx = 0.0f64;
            for ch in 0..c {
                let x = input.data[(n * c + ch) * plane + p].to_f64();
                let g = grad_out.data[(n * c + ch) * plane + p].to_f64();
                xhat[ch] = (x - mean) * inv;
                gxhat[ch] = g * gamma.data[ch].to_f64();
                ggamma[ch] += g * xhat[ch];
                gbeta[ch] += g;
                mean_g += gxhat[ch];
                mean_gx += gxhat[ch] * xhat[ch];
            }
            mean_g /= c as f64;
            mean_gx /= c as f64;
            for ch in 0..c {
                let v = inv * (gxhat[ch] - mean_g - xhat[ch] * mean_gx);
                gx.data[(n * c + ch) * plane + p] = T::from_f64(v);
            }
        }
    }
    let gg = Tensor::new(Shape::new(1, c, 1, 1), ggamma.iter().map(|&v| T::from_f64(v)).collect())?;
    let gb = Tensor::new(Shape::new(1, c, 1, 1), gbeta.iter().map(|&v| T::from_f64(v)).collect())?;
    Ok((gx, gg, gb))
}

/// Channel-axis concatenation. Parts must agree on N, H, W.
pub fn concat_channels<T: Elem>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat_channels: need at least one tensor"))?;
    let s0 = first.shape();
    let mut total_c = 0;
    for part in parts {
        let s = part.shape();
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::config(format!(
                "concat_channels: incompatible shapes {} vs {}",
                s0, s
            )));
        }
        total_c += s.c;
    }
    let out_shape = Shape::new(s0.n, total_c, s0.h, s0.w);
    let plane = s0.h * s0.w;
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..s0.n {
        for part in parts {
            let c = part.shape().c;
            let start = n * c * plane;
            data.extend_from_slice(&part.data()[start..start + c * plane]);
        }
    }
    Tensor::new(out_shape, data)
}

/// Split along the channel axis into parts of the given widths.
pub fn split_channels<T: Elem>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = input.shape();
    let total: usize = sizes.iter().sum();
    if total != s.c {
        return Err(Error::config(format!(
            "split_channels: sizes sum to {total}, tensor has {} channels",
            s.c
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &width in sizes {
        out.push(narrow_channels(input, start, width)?);
        start += width;
    }
    Ok(out)
}

/// Contiguous channel slice [start, start + len).
pub fn narrow_channels<T: Elem>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if start + len > s.c || len == 0 {
        return Err(Error::config(format!(
            "narrow_channels: range {start}..{} out of {} channels",
            start + len,
            s.c
        )));
    }
    let plane = s.h * s.w;
    let out_shape = Shape::new(s.n, len, s.h, s.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        let from = (n * s.c + start) * plane;
        data.extend_from_slice(&input.data()[from..from + len * plane]);
    }
    Tensor::new(out_shape, data)
}

/// Scatter a gradient slice back into a zero tensor of `total_c` channels,
/// at channel offset `start`. Adjoint of [`narrow_channels`].
pub fn embed_channels<T: Elem>(
    grad: &Tensor<T>,
    start: usize,
    total_c: usize,
) -> Result<Tensor<T>> {
    let s = grad.shape();
    if start + s.c > total_c {
        return Err(Error::config("embed_channels: slice exceeds target channel count"));
    }
    let plane = s.h * s.w;
    let out_shape = Shape::new(s.n, total_c, s.h, s.w);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let to = (n * total_c + start) * plane;
        let from = n * s.c * plane;
        out.data[to..to + s.c * plane].copy_from_slice(&grad.data()[from..from + s.c * plane]);
    }
    Ok(out)
}
