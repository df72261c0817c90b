use super::tensor::{Parameter, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update with the default hyperparameters.
/// Consumes `p.grad` as-is (no zeroing) and bumps `step_count`.
pub fn adam_step<T: Scalar>(p: &mut Parameter<T>, lr: T) {
    adam_step_with(
        p,
        lr,
        T::from_f64(ADAM_BETA1),
        T::from_f64(ADAM_BETA2),
        T::from_f64(ADAM_EPSILON),
    );
}

pub fn adam_step_with<T: Scalar>(p: &mut Parameter<T>, lr: T, beta1: T, beta2: T, eps: T) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let one = T::one();
    let bc1 = one - beta1.powi(t);
    let bc2 = one - beta2.powi(t);
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    let g = p.grad.data();
    let x = p.value.data_mut();
    for i in 0..x.len() {
        m[i] = beta1 * m[i] + (one - beta1) * g[i];
        v[i] = beta2 * v[i] + (one - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        x[i] = x[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::{Parameter, Tensor};

    #[test]
    fn first_step_moves_by_lr_sign() {
        // At t=1 the bias corrections cancel, so the update is ~ -lr * sign(g)
        // whenever |g| >> eps.
        let mut p = Parameter::new(Tensor::from_slice(&[0.0f64, 0.0]));
        p.grad = Tensor::from_slice(&[3.0, -0.5]);
        adam_step(&mut p, 0.01);
        assert!((p.value.data()[0] + 0.01).abs() < 1e-6);
        assert!((p.value.data()[1] - 0.01).abs() < 1e-6);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Parameter::new(Tensor::from_slice(&[1.5f64, -2.0]));
        p.grad.fill(0.0);
        adam_step(&mut p, 0.1);
        assert_eq!(p.value.data(), &[1.5, -2.0]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn quadratic_trajectory_matches_reference_formula() {
        // 3 steps minimising f(theta) = theta^2 from theta = 1 at lr = 0.1,
        // against an independently evaluated textbook recursion.
        let (beta1, beta2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.1);
        let mut theta_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * theta_ref;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            theta_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            reference.push(theta_ref);
        }

        let mut p = Parameter::new(Tensor::from_slice(&[1.0f64]));
        for want in reference {
            let g = 2.0 * p.value.data()[0];
            p.zero_grad();
            p.grad.data_mut()[0] = g;
            adam_step(&mut p, lr);
            assert!(
                (p.value.data()[0] - want).abs() < 1e-12,
                "{} vs {}",
                p.value.data()[0],
                want
            );
        }
        assert_eq!(p.step_count, 3);
    }
}
