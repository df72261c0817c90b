use crate::numerics::{Rng, Scalar, Tensor};

/// Additive Gaussian input corruption for denoising training. Applies to the
/// model input only; reconstruction targets stay clean.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, rng_seed: u64) -> Self {
        NoiseSpec { sigma, rng_seed }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 0.1,
            rng_seed: 0,
        }
    }
}

/// frame + N(0, sigma^2) i.i.d. per element. The output is NOT clamped back
/// into [-1, 1]; the loss target remains the clean frame.
pub fn add_noise<T: Scalar>(frame: &Tensor<T>, spec: &NoiseSpec, rng: &mut Rng) -> Tensor<T> {
    if spec.sigma == 0.0 {
        return frame.clone();
    }
    let mut out = frame.clone();
    for v in out.data_mut() {
        *v += T::from_f64(rng.normal() * spec.sigma);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_zero_is_identity() {
        let frame = Tensor::<f32>::filled(&[3, 4, 4], 0.25);
        let mut rng = Rng::new(1);
        let out = add_noise(&frame, &NoiseSpec::new(0.0, 0), &mut rng);
        assert_eq!(out.data(), frame.data());
    }

    #[test]
    fn fixed_seed_fixed_field() {
        let frame = Tensor::<f64>::zeros(&[3, 8, 8]);
        let spec = NoiseSpec::new(0.1, 7);
        let a = add_noise(&frame, &spec, &mut Rng::new(spec.rng_seed));
        let b = add_noise(&frame, &spec, &mut Rng::new(spec.rng_seed));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn empirical_std_matches_sigma() {
        // 10^6 draws land within 1% of the requested sigma.
        let frame = Tensor::<f64>::zeros(&[1_000_000]);
        let spec = NoiseSpec::new(0.1, 21);
        let noisy = add_noise(&frame, &spec, &mut Rng::new(spec.rng_seed));
        let n = noisy.len() as f64;
        let mean: f64 = noisy.data().iter().sum::<f64>() / n;
        let var: f64 = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 0.1).abs() < 0.001, "std {std}");
    }
}
