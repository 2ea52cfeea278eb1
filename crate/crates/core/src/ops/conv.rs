//! Direct 2-D convolution and transposed convolution with hand-derived
//! backward passes.
//!
//! Both operators share [`ConvParams`]. The kernel is always laid out as
//! `(C_out, C_in, K, K)` where `C_in` is the channel count of the operator's
//! own input, so a transposed convolution from 16 to 8 channels stores a
//! `(8, 16, K, K)` kernel.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to the output of a transposed convolution.
    /// Must be zero for a forward convolution and smaller than `stride`.
    pub output_padding: usize,
}

/// Gradients of a convolution-like operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
            output_padding: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            kernel: Tensor::zeros([c_out, c_in, k, k]),
            bias: vec![T::zero(); c_out],
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn k(&self) -> usize {
        self.kernel.shape().h
    }

    pub fn num_parameters(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ks = self.kernel.shape();
        if ks.h != ks.w || ks.h == 0 {
            return Err(Error::shape(format!(
                "kernel {ks} must be square and non-empty"
            )));
        }
        if self.bias.len() != ks.n {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output channels",
                self.bias.len(),
                ks.n
            )));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if self.output_padding >= self.stride.max(1) && self.output_padding != 0 {
            return Err(Error::invalid(format!(
                "output padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }

    /// Kernel with its two channel axes exchanged, turning a `(A, B, K, K)`
    /// kernel into `(B, A, K, K)`. Bias is reset to zero with the new
    /// output width. This pairs a convolution with its adjoint.
    pub fn swap_io(&self) -> ConvParams<T> {
        let ks = self.kernel.shape();
        let kernel = Tensor::from_fn([ks.c, ks.n, ks.h, ks.w], |[a, b, h, w]| {
            self.kernel.at(b, a, h, w)
        });
        ConvParams {
            kernel,
            bias: vec![T::zero(); ks.c],
            stride: self.stride,
            padding: self.padding,
            output_padding: 0,
        }
    }

    /// Output shape of [`conv2d_forward`] for an input of shape `input`.
    pub fn conv_output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if self.output_padding != 0 {
            return Err(Error::invalid(
                "output padding only applies to transposed convolution",
            ));
        }
        if input.c != self.c_in() {
            return Err(Error::shape(format!(
                "input {input} has {} channels, kernel expects {}",
                input.c,
                self.c_in()
            )));
        }
        let dim = |len: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < self.k() {
                return Err(Error::shape(format!(
                    "{axis} {len} with padding {} is smaller than kernel {}",
                    self.padding,
                    self.k()
                )));
            }
            let span = padded - self.k();
            if !span.is_multiple_of(self.stride) {
                return Err(Error::shape(format!(
                    "{axis} {len}: ({len} + 2*{} - {}) is not divisible by stride {}",
                    self.padding,
                    self.k(),
                    self.stride
                )));
            }
            Ok(span / self.stride + 1)
        };
        Ok(Shape::new(
            input.n,
            self.c_out(),
            dim(input.h, "height")?,
            dim(input.w, "width")?,
        ))
    }

    /// Output shape of [`conv_transpose2d_forward`] for an input of shape `input`.
    pub fn transpose_output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.c_in() {
            return Err(Error::shape(format!(
                "input {input} has {} channels, kernel expects {}",
                input.c,
                self.c_in()
            )));
        }
        let dim = |len: usize, axis: &str| -> Result<usize> {
            let out = (len as isize - 1) * self.stride as isize - 2 * self.padding as isize
                + self.k() as isize
                + self.output_padding as isize;
            if len == 0 || out <= 0 {
                return Err(Error::shape(format!(
                    "transposed convolution gives non-positive {axis} {out} for input {len}"
                )));
            }
            Ok(out as usize)
        };
        Ok(Shape::new(
            input.n,
            self.c_out(),
            dim(input.h, "height")?,
            dim(input.w, "width")?,
        ))
    }
}

/// Indices `i` in `0..count` with `0 <= i * stride + k - pad < target`.
#[inline]
fn valid_range(count: usize, target: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    if target + pad <= k {
        return (0, 0);
    }
    let hi = ((target + pad - k - 1) / stride + 1).min(count);
    (lo.min(hi), hi)
}

fn check_grad_shape<T: Real>(grad_out: &Tensor<T>, expected: Shape) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match operator output {expected}",
            grad_out.shape()
        )));
    }
    Ok(())
}

/// Strided, zero-padded 2-D cross-correlation plus bias.
///
/// Every output element starts at its bias and then accumulates
/// `input * weight` in `(c_in, kh, kw)` order; out-of-bounds taps are skipped.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let out_shape = params.conv_output_shape(input.shape())?;
    input.ensure_finite("convolution input")?;
    let is = input.shape();
    let (s, p, k) = (params.stride, params.padding, params.k());
    let (ci_n, co_n) = (params.c_in(), params.c_out());
    let (ho, wo) = (out_shape.h, out_shape.w);
    let mut out = Tensor::zeros(out_shape);
    let x = input.data();
    let wk = params.kernel.data();
    let o = out.data_mut();
    for n in 0..is.n {
        for co in 0..co_n {
            let obase = (n * co_n + co) * ho * wo;
            o[obase..obase + ho * wo].fill(params.bias[co]);
            for ci in 0..ci_n {
                let xbase = (n * ci_n + ci) * is.h * is.w;
                for kh in 0..k {
                    let (oh0, oh1) = valid_range(ho, is.h, kh, s, p);
                    for kw in 0..k {
                        let wv = wk[((co * ci_n + ci) * k + kh) * k + kw];
                        let (ow0, ow1) = valid_range(wo, is.w, kw, s, p);
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let orow = obase + oh * wo;
                            let xrow = xbase + ih * is.w;
                            for ow in ow0..ow1 {
                                let iw = ow * s + kw - p;
                                o[orow + ow] = o[orow + ow] + x[xrow + iw] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, params))`.
// `co` indexes the bias gradient and the flat buffers alike.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = params.conv_output_shape(input.shape())?;
    check_grad_shape(grad_out, out_shape)?;
    let is = input.shape();
    let (s, p, k) = (params.stride, params.padding, params.k());
    let (ci_n, co_n) = (params.c_in(), params.c_out());
    let (ho, wo) = (out_shape.h, out_shape.w);
    let mut gi = Tensor::zeros(is);
    let mut gk = Tensor::zeros(params.kernel.shape());
    let mut gb = vec![T::zero(); co_n];
    let x = input.data();
    let g = grad_out.data();
    let wk = params.kernel.data();
    {
        let gid = gi.data_mut();
        let gkd = gk.data_mut();
        for n in 0..is.n {
            for co in 0..co_n {
                let gbase = (n * co_n + co) * ho * wo;
                gb[co] = gb[co] + g[gbase..gbase + ho * wo].iter().copied().sum::<T>();
                for ci in 0..ci_n {
                    let xbase = (n * ci_n + ci) * is.h * is.w;
                    for kh in 0..k {
                        let (oh0, oh1) = valid_range(ho, is.h, kh, s, p);
                        for kw in 0..k {
                            let widx = ((co * ci_n + ci) * k + kh) * k + kw;
                            let wv = wk[widx];
                            let (ow0, ow1) = valid_range(wo, is.w, kw, s, p);
                            let mut acc = T::zero();
                            for oh in oh0..oh1 {
                                let ih = oh * s + kh - p;
                                let grow = gbase + oh * wo;
                                let xrow = xbase + ih * is.w;
                                for ow in ow0..ow1 {
                                    let iw = ow * s + kw - p;
                                    let gv = g[grow + ow];
                                    acc = acc + gv * x[xrow + iw];
                                    gid[xrow + iw] = gid[xrow + iw] + gv * wv;
                                }
                            }
                            gkd[widx] = gkd[widx] + acc;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gi,
        kernel: gk,
        bias: gb,
    })
}

/// Transposed convolution: the scatter-add adjoint of [`conv2d_forward`],
/// plus bias. Input pixel `(ih, iw)` contributes to output
/// `(ih * stride + kh - padding, iw * stride + kw - padding)`.
pub fn conv_transpose2d_forward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<Tensor<T>> {
    let out_shape = params.transpose_output_shape(input.shape())?;
    input.ensure_finite("transposed convolution input")?;
    let is = input.shape();
    let (s, p, k) = (params.stride, params.padding, params.k());
    let (ci_n, co_n) = (params.c_in(), params.c_out());
    let (ho, wo) = (out_shape.h, out_shape.w);
    let mut out = Tensor::zeros(out_shape);
    let x = input.data();
    let wk = params.kernel.data();
    let o = out.data_mut();
    for n in 0..is.n {
        for co in 0..co_n {
            let obase = (n * co_n + co) * ho * wo;
            o[obase..obase + ho * wo].fill(params.bias[co]);
            for ci in 0..ci_n {
                let xbase = (n * ci_n + ci) * is.h * is.w;
                for kh in 0..k {
                    let (ih0, ih1) = valid_range(is.h, ho, kh, s, p);
                    for kw in 0..k {
                        let wv = wk[((co * ci_n + ci) * k + kh) * k + kw];
                        let (iw0, iw1) = valid_range(is.w, wo, kw, s, p);
                        for ih in ih0..ih1 {
                            let oh = ih * s + kh - p;
                            let orow = obase + oh * wo;
                            let xrow = xbase + ih * is.w;
                            for iw in iw0..iw1 {
                                let ow = iw * s + kw - p;
                                o[orow + ow] = o[orow + ow] + x[xrow + iw] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv_transpose2d_forward(input, params))`.
#[allow(clippy::needless_range_loop)]
pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = params.transpose_output_shape(input.shape())?;
    check_grad_shape(grad_out, out_shape)?;
    let is = input.shape();
    let (s, p, k) = (params.stride, params.padding, params.k());
    let (ci_n, co_n) = (params.c_in(), params.c_out());
    let (ho, wo) = (out_shape.h, out_shape.w);
    let mut gi = Tensor::zeros(is);
    let mut gk = Tensor::zeros(params.kernel.shape());
    let mut gb = vec![T::zero(); co_n];
    let x = input.data();
    let g = grad_out.data();
    let wk = params.kernel.data();
    {
        let gid = gi.data_mut();
        let gkd = gk.data_mut();
        for n in 0..is.n {
            for co in 0..co_n {
                let gbase = (n * co_n + co) * ho * wo;
                gb[co] = gb[co] + g[gbase..gbase + ho * wo].iter().copied().sum::<T>();
                for ci in 0..ci_n {
                    let xbase = (n * ci_n + ci) * is.h * is.w;
                    for kh in 0..k {
                        let (ih0, ih1) = valid_range(is.h, ho, kh, s, p);
                        for kw in 0..k {
                            let widx = ((co * ci_n + ci) * k + kh) * k + kw;
                            let wv = wk[widx];
                            let (iw0, iw1) = valid_range(is.w, wo, kw, s, p);
                            let mut acc = T::zero();
                            for ih in ih0..ih1 {
                                let oh = ih * s + kh - p;
                                let grow = gbase + oh * wo;
                                let xrow = xbase + ih * is.w;
                                for iw in iw0..iw1 {
                                    let ow = iw * s + kw - p;
                                    let gv = g[grow + ow];
                                    acc = acc + gv * x[xrow + iw];
                                    gid[xrow + iw] = gid[xrow + iw] + gv * wv;
                                }
                            }
                            gkd[widx] = gkd[widx] + acc;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gi,
        kernel: gk,
        bias: gb,
    })
}
