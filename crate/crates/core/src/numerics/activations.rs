use super::tensor::{Scalar, Tensor};

/// SELU constants from the published self-normalizing formulation.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `pre` is the tensor that went INTO relu; caches keep it so the finite
/// difference harness can measure the distance to the kink.
pub fn relu_backward<T: Scalar>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(pre.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data().iter()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn selu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let lambda = T::from_f64(SELU_LAMBDA);
    let alpha = T::from_f64(SELU_ALPHA);
    x.map(|v| {
        if v > T::zero() {
            lambda * v
        } else {
            lambda * alpha * (v.exp() - T::one())
        }
    })
}

pub fn selu_backward<T: Scalar>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(pre.shape(), dy.shape());
    let lambda = T::from_f64(SELU_LAMBDA);
    let alpha = T::from_f64(SELU_ALPHA);
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data().iter()) {
        let slope = if p > T::zero() {
            lambda
        } else {
            lambda * alpha * p.exp()
        };
        *d = *d * slope;
    }
    dx
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward from the sigmoid OUTPUT: s' = y (1 - y).
pub fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(out.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(out.data().iter()) {
        *d = *d * y * (T::one() - y);
    }
    dx
}

/// Softmax normalized along `axis`, max-shifted for stability. Output rows
/// along the axis are nonnegative and sum to one.
pub fn softmax_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    assert!(axis < shape.len(), "softmax axis {} out of range", axis);
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..axis_len {
                let v = data[base + a * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for a in 0..axis_len {
                let e = (data[base + a * inner] - max).exp();
                data[base + a * inner] = e;
                sum += e;
            }
            for a in 0..axis_len {
                data[base + a * inner] /= sum;
            }
        }
    }
    out
}

/// Backward of softmax along `axis`, from its output:
/// dx = y * (dy - sum(dy * y)) per fiber.
pub fn softmax_backward_axis<T: Scalar>(out: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    debug_assert_eq!(out.shape(), dy.shape());
    let shape = out.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = dy.clone();
    let y = out.data();
    let g = dy.data();
    let d = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut dot = T::zero();
            for a in 0..axis_len {
                let idx = base + a * inner;
                dot += g[idx] * y[idx];
            }
            for a in 0..axis_len {
                let idx = base + a * inner;
                d[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    dx
}
