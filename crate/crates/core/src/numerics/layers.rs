//! Affine layer and global average pooling.

use crate::error::{Error, Result};

use super::rng::Rng;
use super::tensor::{Parameter, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// [out, in]
    pub weight: Parameter<T>,
    /// [out]
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| T::from_f64(rng.normal() * std))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weight: Parameter::new(Tensor::from_vec(&[out_dim, in_dim], data).expect("init")),
            bias: Parameter::zeros(&[out_dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.len() != self.in_dim {
            return Err(Error::shape(format!(
                "linear expects {} inputs, got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        let w = self.weight.value.data();
        let mut out = self.bias.value.data().to_vec();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += super::matmul::dot(row, x.data());
        }
        Tensor::from_vec(&[self.out_dim], out)
    }

    /// Gradient wrt the input only: dx = W^T dy.
    pub fn backward_input(&self, dy: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let w = self.weight.value.data();
        let mut dx = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = dy.data()[o];
            if g == T::zero() {
                continue;
            }
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                dx[i] += g * w[row + i];
            }
        }
        Tensor::from_vec(&[self.in_dim], dx).expect("dx shape")
    }

    /// Accumulates dW, db; returns dx. `x` is the forward input.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        let mut dx = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = dy.data()[o];
            db[o] += g;
            if g == T::zero() {
                continue;
            }
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                dw[row + i] += g * x.data()[i];
                dx[i] += g * w[row + i];
            }
        }
        Tensor::from_vec(&[self.in_dim], dx).expect("dx shape")
    }
}

/// Global average pool over the spatial plane: [C, H, W] -> [C].
pub fn gap2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("gap2d expects [C, H, W], got {:?}", shape)));
    }
    let (c, hw) = (shape[0], shape[1] * shape[2]);
    let inv = T::from_f64(1.0 / hw as f64);
    let mut out = vec![T::zero(); c];
    for (ch, out_v) in out.iter_mut().enumerate() {
        let mut s = T::zero();
        for &v in &x.data()[ch * hw..(ch + 1) * hw] {
            s += v;
        }
        *out_v = s * inv;
    }
    Tensor::from_vec(&[c], out)
}

pub fn gap2d_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    debug_assert_eq!(dy.len(), c);
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(in_shape);
    for ch in 0..c {
        let g = dy.data()[ch] * inv;
        dx.data_mut()[ch * h * w..(ch + 1) * h * w]
            .iter_mut()
            .for_each(|v| *v = g);
    }
    dx
}

/// Global average pool over time: [T, C] -> [C].
pub fn gap1d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!("gap1d expects [T, C], got {:?}", shape)));
    }
    let (t, c) = (shape[0], shape[1]);
    let inv = T::from_f64(1.0 / t as f64);
    let mut out = vec![T::zero(); c];
    for row in 0..t {
        for ch in 0..c {
            out[ch] += x.data()[row * c + ch];
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::from_vec(&[c], out)
}

pub fn gap1d_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (t, c) = (in_shape[0], in_shape[1]);
    debug_assert_eq!(dy.len(), c);
    let inv = T::from_f64(1.0 / t as f64);
    let mut dx = Tensor::zeros(in_shape);
    for row in 0..t {
        for ch in 0..c {
            dx.data_mut()[row * c + ch] = dy.data()[ch] * inv;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap2d_table_row() {
        // 128x2x2 -> 128, constant tensor of v pools to v.
        let x = Tensor::<f32>::filled(&[128, 2, 2], 0.75);
        let y = gap2d(&x).unwrap();
        assert_eq!(y.shape(), &[128]);
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }

    #[test]
    fn gap1d_constant() {
        let x = Tensor::<f64>::filled(&[5, 3], -2.0);
        let y = gap1d(&x).unwrap();
        assert_eq!(y.shape(), &[3]);
        assert!(y.data().iter().all(|&v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn linear_identity() {
        let mut rng = Rng::new(1);
        let mut lin = Linear::<f64>::new(4, 4, &mut rng);
        lin.weight.value.fill(0.0);
        for i in 0..4 {
            lin.weight.value.data_mut()[i * 4 + i] = 1.0;
        }
        lin.bias.value.fill(0.0);
        let x = Tensor::from_slice(&[1.0, -2.0, 3.0, 0.5]);
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn linear_rejects_dim_mismatch() {
        let mut rng = Rng::new(2);
        let lin = Linear::<f64>::new(4, 2, &mut rng);
        assert!(lin.forward(&Tensor::zeros(&[5])).is_err());
    }
}
