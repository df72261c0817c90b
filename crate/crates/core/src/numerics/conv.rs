//! Convolution layers (2D, transposed 2D, 1D) via im2col plus the matmul
//! kernels. Each layer exposes `forward` returning the output and a cache,
//! and `backward` which accumulates parameter gradients and returns the
//! gradient with respect to its input.

use crate::error::{Error, Result};

use super::matmul::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::rng::Rng;
use super::tensor::{Parameter, Scalar, Tensor};

/// Kaiming-style init: N(0, sqrt(2 / fan_in)) driven by the module PRNG.
fn kaiming<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.normal() * std)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

pub fn conv_out_extent(extent: usize, kernel: usize, padding: usize, stride: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

/// input [C, H, W] -> cols [C*k*k, H'*W'] with zero padding.
fn im2col_2d<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); c_in * k * k * oh * ow];
    let hw_out = oh * ow;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * hw_out;
                for out_i in 0..oh {
                    let in_i = (out_i * stride + ki) as isize - padding as isize;
                    if in_i < 0 || in_i >= h as isize {
                        continue;
                    }
                    let x_row = (c * h + in_i as usize) * w;
                    let col_row = row + out_i * ow;
                    for out_j in 0..ow {
                        let in_j = (out_j * stride + kj) as isize - padding as isize;
                        if in_j < 0 || in_j >= w as isize {
                            continue;
                        }
                        cols[col_row + out_j] = x[x_row + in_j as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint scatter of `im2col_2d`: cols [C*k*k, H'*W'] -> image [C, H, W].
fn col2im_2d<T: Scalar>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut x = vec![T::zero(); c_in * h * w];
    let hw_out = oh * ow;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * hw_out;
                for out_i in 0..oh {
                    let in_i = (out_i * stride + ki) as isize - padding as isize;
                    if in_i < 0 || in_i >= h as isize {
                        continue;
                    }
                    let x_row = (c * h + in_i as usize) * w;
                    let col_row = row + out_i * ow;
                    for out_j in 0..ow {
                        let in_j = (out_j * stride + kj) as isize - padding as isize;
                        if in_j < 0 || in_j >= w as isize {
                            continue;
                        }
                        x[x_row + in_j as usize] += cols[col_row + out_j];
                    }
                }
            }
        }
    }
    x
}

/// 2D convolution, Eq.-style: out(c_out) = bias(c_out) + sum_c w(c_out, c) * x(c).
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    /// [C_out, C_in, k, k]
    pub weight: Parameter<T>,
    /// [C_out]
    pub bias: Parameter<T>,
}

#[derive(Debug)]
pub struct Conv2dCache<T> {
    cols: Vec<T>,
    in_shape: [usize; 3],
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
            weight: Parameter::new(kaiming(
                rng,
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
            )),
            bias: Parameter::zeros(&[out_channels]),
        }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::shape(format!(
                "conv2d kernel {} larger than padded input {}x{}",
                self.kernel,
                h + 2 * self.padding,
                w + 2 * self.padding
            )));
        }
        Ok([
            self.out_channels,
            conv_out_extent(h, self.kernel, self.padding, self.stride),
            conv_out_extent(w, self.kernel, self.padding, self.stride),
        ])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.in_channels {
            return Err(Error::shape(format!(
                "conv2d expects [{}, H, W], got {:?}",
                self.in_channels, shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let [c_out, oh, ow] = self.output_shape(h, w)?;
        let cols = im2col_2d(
            x.data(),
            self.in_channels,
            h,
            w,
            self.kernel,
            self.padding,
            self.stride,
            oh,
            ow,
        );
        let kk = self.in_channels * self.kernel * self.kernel;
        let hw = oh * ow;
        let mut out = vec![T::zero(); c_out * hw];
        for c in 0..c_out {
            let b = self.bias.value.data()[c];
            out[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = b);
        }
        matmul_acc(self.weight.value.data(), &cols, c_out, kk, hw, &mut out);
        Ok((
            Tensor::from_vec(&[c_out, oh, ow], out)?,
            Conv2dCache {
                cols,
                in_shape: [self.in_channels, h, w],
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates weight/bias gradients, returns d(input).
    pub fn backward(&mut self, cache: &Conv2dCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (oh, ow) = cache.out_hw;
        let hw = oh * ow;
        debug_assert_eq!(dy.shape(), &[self.out_channels, oh, ow]);
        let kk = self.in_channels * self.kernel * self.kernel;
        let dyd = dy.data();

        // dW += dY * cols^T
        matmul_nt_acc(
            dyd,
            &cache.cols,
            self.out_channels,
            hw,
            kk,
            self.weight.grad.data_mut(),
        );
        // db += row sums of dY
        for c in 0..self.out_channels {
            let mut s = T::zero();
            for &v in &dyd[c * hw..(c + 1) * hw] {
                s += v;
            }
            self.bias.grad.data_mut()[c] += s;
        }
        self.backward_input(cache, dy)
    }

    /// Gradient wrt the input only; used where the layer's own parameters
    /// are frozen.
    pub fn backward_input(&self, cache: &Conv2dCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (oh, ow) = cache.out_hw;
        let hw = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut dcols = vec![T::zero(); kk * hw];
        matmul_tn_acc(
            self.weight.value.data(),
            dy.data(),
            kk,
            self.out_channels,
            hw,
            &mut dcols,
        );
        let [c_in, h, w] = cache.in_shape;
        let dx = col2im_2d(
            &dcols,
            c_in,
            h,
            w,
            self.kernel,
            self.padding,
            self.stride,
            oh,
            ow,
        );
        Tensor::from_vec(&[c_in, h, w], dx).expect("col2im shape")
    }
}

/// Transposed 2D convolution (deconvolution). Weight layout [C_in, C_out, k, k]
/// makes it the exact linear adjoint of `Conv2d` sharing the same weight:
/// <conv2d(x, w), y> == <x, conv_transpose2d(y, w)>.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub output_padding: usize,
    /// [C_in, C_out, k, k]
    pub weight: Parameter<T>,
    /// [C_out]
    pub bias: Parameter<T>,
}

#[derive(Debug)]
pub struct ConvTranspose2dCache<T> {
    input: Tensor<T>,
    out_hw: (usize, usize),
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        output_padding: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(
            output_padding < stride,
            "output_padding must be < stride for unambiguous geometry"
        );
        let fan_in = in_channels * kernel * kernel;
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
            output_padding,
            weight: Parameter::new(kaiming(
                rng,
                &[in_channels, out_channels, kernel, kernel],
                fan_in,
            )),
            bias: Parameter::zeros(&[out_channels]),
        }
    }

    pub fn output_extent(&self, extent: usize) -> usize {
        self.stride * (extent - 1) + self.kernel + self.output_padding - 2 * self.padding
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTranspose2dCache<T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.in_channels {
            return Err(Error::shape(format!(
                "conv_transpose2d expects [{}, H, W], got {:?}",
                self.in_channels, shape
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let (out_h, out_w) = (self.output_extent(h), self.output_extent(w));
        // Geometry must invert the matching forward conv.
        if conv_out_extent(out_h, self.kernel, self.padding, self.stride) != h
            || conv_out_extent(out_w, self.kernel, self.padding, self.stride) != w
        {
            return Err(Error::shape(format!(
                "conv_transpose2d geometry inconsistent: {}x{} -> {}x{}",
                h, w, out_h, out_w
            )));
        }
        let kk = self.out_channels * self.kernel * self.kernel;
        let hw_in = h * w;
        // cols = W^T (viewed [C_in x kk]) * x, scattered onto the big image.
        let mut dcols = vec![T::zero(); kk * hw_in];
        matmul_tn_acc(
            self.weight.value.data(),
            x.data(),
            kk,
            self.in_channels,
            hw_in,
            &mut dcols,
        );
        let mut out = col2im_2d(
            &dcols,
            self.out_channels,
            out_h,
            out_w,
            self.kernel,
            self.padding,
            self.stride,
            h,
            w,
        );
        let hw_out = out_h * out_w;
        for c in 0..self.out_channels {
            let b = self.bias.value.data()[c];
            out[c * hw_out..(c + 1) * hw_out]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Ok((
            Tensor::from_vec(&[self.out_channels, out_h, out_w], out)?,
            ConvTranspose2dCache {
                input: x.clone(),
                out_hw: (out_h, out_w),
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvTranspose2dCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (out_h, out_w) = cache.out_hw;
        debug_assert_eq!(dy.shape(), &[self.out_channels, out_h, out_w]);
        let in_shape = cache.input.shape();
        let (h, w) = (in_shape[1], in_shape[2]);
        let hw_in = h * w;
        let hw_out = out_h * out_w;
        let kk = self.out_channels * self.kernel * self.kernel;

        // db += per-channel sums of dY
        for c in 0..self.out_channels {
            let mut s = T::zero();
            for &v in &dy.data()[c * hw_out..(c + 1) * hw_out] {
                s += v;
            }
            self.bias.grad.data_mut()[c] += s;
        }
        // Backward data is a plain convolution of dY with the same weight.
        let cols_dy = im2col_2d(
            dy.data(),
            self.out_channels,
            out_h,
            out_w,
            self.kernel,
            self.padding,
            self.stride,
            h,
            w,
        );
        let mut dx = vec![T::zero(); self.in_channels * hw_in];
        matmul_acc(
            self.weight.value.data(),
            &cols_dy,
            self.in_channels,
            kk,
            hw_in,
            &mut dx,
        );
        // dW += x * cols_dy^T
        matmul_nt_acc(
            cache.input.data(),
            &cols_dy,
            self.in_channels,
            hw_in,
            kk,
            self.weight.grad.data_mut(),
        );
        Tensor::from_vec(&[self.in_channels, h, w], dx).expect("dx shape")
    }
}

/// Temporal convolution over [T, C_in] sequences, the 1D analogue of Conv2d.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    /// [C_out, C_in, k]
    pub weight: Parameter<T>,
    /// [C_out]
    pub bias: Parameter<T>,
}

#[derive(Debug)]
pub struct Conv1dCache<T> {
    cols: Vec<T>,
    t_in: usize,
    t_out: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
            weight: Parameter::new(kaiming(rng, &[out_channels, in_channels, kernel], fan_in)),
            bias: Parameter::zeros(&[out_channels]),
        }
    }

    /// cols layout: row t_out holds, for c then ki, x[t_out*s - p + ki, c],
    /// matching the [C_out, C_in, k] flat weight.
    fn im2col(&self, x: &[T], t_in: usize, t_out: usize) -> Vec<T> {
        let c_in = self.in_channels;
        let kk = c_in * self.kernel;
        let mut cols = vec![T::zero(); t_out * kk];
        for t in 0..t_out {
            let row = t * kk;
            for ki in 0..self.kernel {
                let src = (t * self.stride + ki) as isize - self.padding as isize;
                if src < 0 || src >= t_in as isize {
                    continue;
                }
                let x_row = src as usize * c_in;
                for c in 0..c_in {
                    cols[row + c * self.kernel + ki] = x[x_row + c];
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Conv1dCache<T>)> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_channels {
            return Err(Error::shape(format!(
                "conv1d expects [T, {}], got {:?}",
                self.in_channels, shape
            )));
        }
        let t_in = shape[0];
        if t_in + 2 * self.padding < self.kernel {
            return Err(Error::shape(format!(
                "conv1d kernel {} larger than padded length {}",
                self.kernel,
                t_in + 2 * self.padding
            )));
        }
        let t_out = conv_out_extent(t_in, self.kernel, self.padding, self.stride);
        let cols = self.im2col(x.data(), t_in, t_out);
        let kk = self.in_channels * self.kernel;
        let mut out = vec![T::zero(); t_out * self.out_channels];
        for t in 0..t_out {
            out[t * self.out_channels..(t + 1) * self.out_channels]
                .copy_from_slice(self.bias.value.data());
        }
        matmul_nt_acc(
            &cols,
            self.weight.value.data(),
            t_out,
            kk,
            self.out_channels,
            &mut out,
        );
        Ok((
            Tensor::from_vec(&[t_out, self.out_channels], out)?,
            Conv1dCache { cols, t_in, t_out },
        ))
    }

    pub fn backward(&mut self, cache: &Conv1dCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (t_in, t_out) = (cache.t_in, cache.t_out);
        debug_assert_eq!(dy.shape(), &[t_out, self.out_channels]);
        let kk = self.in_channels * self.kernel;
        let dyd = dy.data();

        // db += column sums of dY
        for t in 0..t_out {
            for c in 0..self.out_channels {
                self.bias.grad.data_mut()[c] += dyd[t * self.out_channels + c];
            }
        }
        // dW += dY^T * cols
        matmul_tn_acc(
            dyd,
            &cache.cols,
            self.out_channels,
            t_out,
            kk,
            self.weight.grad.data_mut(),
        );
        // dcols = dY * W, then scatter over time.
        let mut dcols = vec![T::zero(); t_out * kk];
        matmul_acc(
            dyd,
            self.weight.value.data(),
            t_out,
            self.out_channels,
            kk,
            &mut dcols,
        );
        let mut dx = vec![T::zero(); t_in * self.in_channels];
        for t in 0..t_out {
            let row = t * kk;
            for ki in 0..self.kernel {
                let src = (t * self.stride + ki) as isize - self.padding as isize;
                if src < 0 || src >= t_in as isize {
                    continue;
                }
                let x_row = src as usize * self.in_channels;
                for c in 0..self.in_channels {
                    dx[x_row + c] += dcols[row + c * self.kernel + ki];
                }
            }
        }
        Tensor::from_vec(&[t_in, self.in_channels], dx).expect("dx shape")
    }
}
