//! 2D convolutions in the cross-correlation convention: stride 1, zero
//! "same" padding, grouped/depth-wise/dilated/strip kernels.
//!
//! One direct kernel covers every case. Per (image, output channel) an f64
//! accumulator row is built tap by tap, so each output element has a fixed
//! reduction order and results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Shape, Tensor};

/// Static description of a convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub groups: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> ConvSpec {
        ConvSpec {
            kernel_h: 1,
            kernel_w: 1,
            dilation: 1,
            groups: 1,
            in_channels,
            out_channels,
            has_bias: true,
        }
    }

    pub fn dense(in_channels: usize, out_channels: usize, kernel: usize) -> ConvSpec {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            dilation: 1,
            groups: 1,
            in_channels,
            out_channels,
            has_bias: true,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> ConvSpec {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            dilation,
            groups: channels,
            in_channels: channels,
            out_channels: channels,
            has_bias: true,
        }
    }

    /// Depth-wise strip kernel, e.g. 1 x k or k x 1.
    pub fn depthwise_strip(
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        dilation: usize,
    ) -> ConvSpec {
        ConvSpec {
            kernel_h,
            kernel_w,
            dilation,
            groups: channels,
            in_channels: channels,
            out_channels: channels,
            has_bias: true,
        }
    }

    pub fn without_bias(mut self) -> ConvSpec {
        self.has_bias = false;
        self
    }

    /// Kernel extent including dilation gaps: k + (k-1)(d-1).
    pub fn effective_extent(&self) -> (usize, usize) {
        (
            self.kernel_h + (self.kernel_h - 1) * (self.dilation - 1),
            self.kernel_w + (self.kernel_w - 1) * (self.dilation - 1),
        )
    }

    /// Zero padding that keeps output spatial size equal to the input's.
    pub fn padding(&self) -> (usize, usize) {
        let (eh, ew) = self.effective_extent();
        ((eh - 1) / 2, (ew - 1) / 2)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels / self.groups, self.kernel_h, self.kernel_w)
    }

    pub fn weight_elements(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel_h * self.kernel_w
    }

    pub fn param_elements(&self) -> usize {
        self.weight_elements() + if self.has_bias { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(Error::config("conv: kernel, dilation and groups must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("conv: channel counts must be positive"));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::config(format!(
                "conv: channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        let (eh, ew) = self.effective_extent();
        if eh % 2 == 0 || ew % 2 == 0 {
            return Err(Error::config(format!(
                "conv: effective kernel extent {eh}x{ew} must be odd for same padding"
            )));
        }
        Ok(())
    }
}

/// Dot product in f64 with eight fixed accumulator lanes combined in a fixed
/// tree, so the summation order (and therefore the result) is reproducible
/// while the lanes vectorize.
#[inline]
fn dot_f64<T: Elem>(a: &[T], b: &[T]) -> f64 {
    const LANES: usize = 8;
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut lanes = [0.0f64; LANES];
    let chunks = n / LANES;
    for i in 0..chunks {
        let base = i * LANES;
        for (l, lane) in lanes.iter_mut().enumerate() {
            *lane += a[base + l].to_f64() * b[base + l].to_f64();
        }
    }
    let mut tail = 0.0f64;
    for i in chunks * LANES..n {
        tail += a[i].to_f64() * b[i].to_f64();
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

fn check_operands<T: Elem>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.validate()?;
    if input.shape().c != spec.in_channels {
        return Err(Error::config(format!(
            "conv: input has {} channels, spec expects {}",
            input.shape().c,
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::config(format!(
            "conv: weight shape {} does not match spec {}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) => {
            if b.numel() != spec.out_channels {
                return Err(Error::config(format!(
                    "conv: bias has {} elements, spec expects {}",
                    b.numel(),
                    spec.out_channels
                )));
            }
        }
        (None, false) => {}
        (Some(_), false) => return Err(Error::config("conv: bias given but spec.has_bias=false")),
        (None, true) => return Err(Error::config("conv: spec.has_bias=true but no bias given")),
    }
    Ok(())
}

/// 1x1 ungrouped fast path: a register-tiled matrix product over pixels.
/// Each output element still accumulates over input channels in ascending
/// order, so results match the generic path bit for bit.
fn conv2d_pointwise<T: Elem>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Tensor<T> {
    const CO_TILE: usize = 4;
    const PX_TILE: usize = 64;
    let s = input.shape();
    let plane = s.h * s.w;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let mut out = Tensor::zeros(Shape::new(s.n, cout, s.h, s.w));
    let in_data = input.data();
    let w_data = weight.data();
    let out_data = out.data_mut();
    let mut acc = [[0.0f64; PX_TILE]; CO_TILE];
    for n in 0..s.n {
        let in_image = &in_data[n * cin * plane..(n + 1) * cin * plane];
        let mut co = 0;
        while co < cout {
            let co_n = CO_TILE.min(cout - co);
            let mut p = 0;
            while p < plane {
                let px_n = PX_TILE.min(plane - p);
                for (t, row) in acc.iter_mut().take(co_n).enumerate() {
                    let bias_v = bias.map_or(0.0, |b| b.data()[co + t].to_f64());
                    row[..px_n].fill(bias_v);
                }
                for ci in 0..cin {
                    let src = &in_image[ci * plane + p..ci * plane + p + px_n];
                    for t in 0..co_n {
                        let wv = w_data[(co + t) * cin + ci].to_f64();
                        let row = &mut acc[t][..px_n];
                        for (a, &v) in row.iter_mut().zip(src) {
                            *a += wv * v.to_f64();
                        }
                    }
                }
                for t in 0..co_n {
                    let dst_base = (n * cout + co + t) * plane + p;
                    let dst = &mut out_data[dst_base..dst_base + px_n];
                    for (o, &a) in dst.iter_mut().zip(acc[t][..px_n].iter()) {
                        *o = T::from_f64(a);
                    }
                }
                p += px_n;
            }
            co += co_n;
        }
    }
    out
}

/// Grouped 2D cross-correlation with zero "same" padding, stride 1.
pub fn conv2d<T: Elem>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands(input, weight, bias, spec)?;
    if spec.kernel_h == 1 && spec.kernel_w == 1 && spec.groups == 1 {
        return Ok(conv2d_pointwise(input, weight, bias, spec));
    }
    let s = input.shape();
    let (h, w) = (s.h, s.w);
    let (ph, pw) = spec.padding();
    let d = spec.dilation;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let plane = h * w;

    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, h, w));
    let mut acc = vec![0.0f64; plane];
    let in_data = input.data();
    let w_data = weight.data();
    let out_data = out.data_mut();

    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let g = co / cout_g;
            let bias_v = bias.map_or(0.0, |b| b.data()[co].to_f64());
            acc.fill(bias_v);
            for cil in 0..cin_g {
                let ci = g * cin_g + cil;
                let in_base = (n * spec.in_channels + ci) * plane;
                let w_base = (co * cin_g + cil) * spec.kernel_h * spec.kernel_w;
                for ki in 0..spec.kernel_h {
                    let dy = (ki * d) as isize - ph as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy.max(0)).max(0) as usize;
                    for kj in 0..spec.kernel_w {
                        let wv = w_data[w_base + ki * spec.kernel_w + kj].to_f64();
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = (kj * d) as isize - pw as isize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)).max(0) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let src = (in_base + ((y as isize + dy) as usize) * w) as isize + dx;
                            let row = &in_data[(src + x0 as isize) as usize
                                ..(src + x1 as isize) as usize];
                            let dst = &mut acc[y * w + x0..y * w + x1];
                            for (a, &v) in dst.iter_mut().zip(row) {
                                *a += wv * v.to_f64();
                            }
                        }
                    }
                }
            }
            let out_base = (n * spec.out_channels + co) * plane;
            for (o, &a) in out_data[out_base..out_base + plane].iter_mut().zip(acc.iter()) {
                *o = T::from_f64(a);
            }
        }
    }
    Ok(out)
}

/// Spec of the adjoint convolution used for the input gradient.
fn transpose_spec(spec: &ConvSpec) -> ConvSpec {
    ConvSpec {
        kernel_h: spec.kernel_h,
        kernel_w: spec.kernel_w,
        dilation: spec.dilation,
        groups: spec.groups,
        in_channels: spec.out_channels,
        out_channels: spec.in_channels,
        has_bias: false,
    }
}

/// Weight of the adjoint convolution: channel roles swapped within each
/// group and the kernel flipped spatially.
fn transpose_weight<T: Elem>(weight: &Tensor<T>, spec: &ConvSpec) -> Tensor<T> {
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut out = Tensor::zeros(Shape::new(spec.in_channels, cout_g, kh, kw));
    for g in 0..spec.groups {
        for col in 0..cout_g {
            let co = g * cout_g + col;
            for cil in 0..cin_g {
                let ci = g * cin_g + cil;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let v = weight.at(co, cil, ki, kj);
                        let idx = out.index(ci, col, kh - 1 - ki, kw - 1 - kj);
                        out.data_mut()[idx] = v;
                    }
                }
            }
        }
    }
    out
}

/// Gradient of the convolution output w.r.t. its input.
///
/// With stride 1 and odd effective extents this is itself a "same"
/// cross-correlation of the upstream gradient with the flipped, channel
/// transposed weight at the same dilation.
pub fn conv2d_grad_input<T: Elem>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let tw = transpose_weight(weight, spec);
    conv2d(grad_out, &tw, None, &transpose_spec(spec))
}

/// Gradient w.r.t. the weight: per weight tap, a correlation of the input
/// with the upstream gradient over all images and valid positions.
pub fn conv2d_grad_weight<T: Elem>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let (h, w) = (s.h, s.w);
    let (ph, pw) = spec.padding();
    let d = spec.dilation;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let plane = h * w;
    if grad_out.shape() != Shape::new(s.n, spec.out_channels, h, w) {
        return Err(Error::config("conv grad_weight: upstream gradient shape mismatch"));
    }

    let mut gw = Tensor::zeros(spec.weight_shape());
    let in_data = input.data();
    let go_data = grad_out.data();
    for co in 0..spec.out_channels {
        let g = co / cout_g;
        for cil in 0..cin_g {
            let ci = g * cin_g + cil;
            for ki in 0..spec.kernel_h {
                let dy = (ki * d) as isize - ph as isize;
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy.max(0)).max(0) as usize;
                for kj in 0..spec.kernel_w {
                    let dx = (kj * d) as isize - pw as isize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx.max(0)).max(0) as usize;
                    if x0 >= x1 {
                        let idx = gw.index(co, cil, ki, kj);
                        gw.data_mut()[idx] = T::from_f64(0.0);
                        continue;
                    }
                    let mut acc = 0.0f64;
                    for n in 0..s.n {
                        let go_base = (n * spec.out_channels + co) * plane;
                        let in_base = (n * spec.in_channels + ci) * plane;
                        for y in y0..y1 {
                            let go_row = &go_data[go_base + y * w + x0..go_base + y * w + x1];
                            let src =
                                (in_base + ((y as isize + dy) as usize) * w) as isize + dx;
                            let in_row = &in_data
                                [(src + x0 as isize) as usize..(src + x1 as isize) as usize];
                            acc += dot_f64(go_row, in_row);
                        }
                    }
                    let idx = gw.index(co, cil, ki, kj);
                    gw.data_mut()[idx] = T::from_f64(acc);
                }
            }
        }
    }
    Ok(gw)
}

/// Gradient w.r.t. the bias: upstream gradient summed over images and
/// spatial positions, returned as (1, C_out, 1, 1).
pub fn conv2d_grad_bias<T: Elem>(grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let plane = s.h * s.w;
    let mut gb = vec![0.0f64; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let mut acc = 0.0f64;
            for p in 0..plane {
                acc += grad_out.data()[base + p].to_f64();
            }
            gb[c] += acc;
        }
    }
    Tensor::new(Shape::new(1, s.c, 1, 1), gb.into_iter().map(T::from_f64).collect())
        .expect("bias gradient shape")
}
