//! Central finite-difference harness. Runs in 64-bit only; the production
//! 32-bit paths are validated by comparison against the 64-bit results.

use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;

/// Central finite differences of a scalar-valued function at `x`.
pub fn central_diff<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Tensor<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative error between an analytic and a finite-difference gradient.
/// The denominator floors at 1e-3 so near-zero pairs compare on an absolute
/// scale instead of blowing up.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data().iter()) {
        let denom = a.abs().max(n.abs()).max(1e-3);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_slice(&[1.0, -2.0, 0.5]);
        let g = central_diff(|t| t.data().iter().map(|v| v * v).sum(), &x, FD_STEP);
        let want = Tensor::from_slice(&[2.0, -4.0, 1.0]);
        assert!(max_rel_err(&want, &g) < FD_TOLERANCE);
    }
}
