use crate::error::{Error, Result};
use crate::numerics::rng::mix3;
use crate::numerics::{adam_step, Rng, Scalar, Tensor};

use super::{loss_xent, loss_xent_grad_logits, ClassifierModel, Label, MultiViewSample};

#[derive(Debug, Clone)]
pub struct TrainClfOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainClfOptions {
    pub fn new(seed: u64) -> Self {
        TrainClfOptions {
            epochs: 50,
            lr: 1e-3,
            seed,
        }
    }
}

/// Train on a unit batch size: one Adam step per sample, which handles
/// variable-length sequences without padding. Deterministic under a fixed
/// seed and sample order. Returns the per-epoch mean cross-entropy.
pub fn train_classifier<T: Scalar>(
    model: &mut ClassifierModel<T>,
    samples: &[MultiViewSample<T>],
    opts: &TrainClfOptions,
) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::usage("training needs at least two samples"));
    }
    let has0 = samples.iter().any(|s| s.label == Label::Class0);
    let has1 = samples.iter().any(|s| s.label == Label::Class1);
    if !has0 || !has1 {
        return Err(Error::usage("training set does not span both classes"));
    }

    let lr = T::from_f64(opts.lr);
    let mut shuffle_rng = Rng::new(mix3(opts.seed, 0xc1f, 0));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for _epoch in 0..opts.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let sample = &samples[idx];
            let views: Vec<Tensor<T>> =
                sample.views.iter().map(|v| v.features.clone()).collect();
            let cache = model.forward(&views)?;
            loss_sum += loss_xent(&cache.probs, sample.label).to_f64();
            let dlogits = loss_xent_grad_logits(&cache.probs, sample.label);
            model.zero_grads();
            model.backward(&cache, &dlogits);
            for p in model.parameters_mut() {
                adam_step(p, lr);
            }
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
    }
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassifierConfig, ViewFeatureSequence, ViewId};

    fn separable_samples(n_per_class: usize, t: usize, n_z: usize) -> Vec<MultiViewSample<f32>> {
        // Class 1 rides a constant offset on the first half of the channels.
        let mut rng = Rng::new(100);
        let mut samples = Vec::new();
        for i in 0..2 * n_per_class {
            let label = if i % 2 == 0 { Label::Class0 } else { Label::Class1 };
            let mut data = Vec::with_capacity(t * n_z);
            for _ in 0..t {
                for c in 0..n_z {
                    let base = rng.normal() * 0.1;
                    let bump = if label == Label::Class1 && c < n_z / 2 {
                        1.0
                    } else {
                        0.0
                    };
                    data.push((base + bump) as f32);
                }
            }
            samples.push(MultiViewSample {
                trial_id: format!("t{i:03}"),
                subject_id: format!("s{:02}", i % 5),
                views: vec![ViewFeatureSequence {
                    view_id: ViewId::Left,
                    features: Tensor::from_vec(&[t, n_z], data).unwrap(),
                }],
                label,
            });
        }
        samples
    }

    #[test]
    fn separable_set_reaches_full_training_accuracy() {
        let samples = separable_samples(10, 12, 8);
        let config = ClassifierConfig {
            n_z: 8,
            views: 1,
            use_xva: false,
            use_se: true,
            seed: 1,
        };
        let mut model = ClassifierModel::<f32>::new(config).unwrap();
        let losses = train_classifier(&mut model, &samples, &TrainClfOptions::new(2)).unwrap();
        assert_eq!(losses.len(), 50);
        let correct = samples
            .iter()
            .filter(|s| {
                let views: Vec<Tensor<f32>> =
                    s.views.iter().map(|v| v.features.clone()).collect();
                let (probs, _) = model.classify(&views).unwrap();
                let pred = if probs.data()[1] > probs.data()[0] { 1 } else { 0 };
                pred == s.label.index()
            })
            .count();
        assert_eq!(correct, samples.len(), "training accuracy below 1.0");
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn zero_epochs_leaves_the_model_unchanged() {
        let samples = separable_samples(2, 6, 4);
        let config = ClassifierConfig {
            n_z: 4,
            views: 1,
            use_xva: false,
            use_se: false,
            seed: 3,
        };
        let mut model = ClassifierModel::<f32>::new(config).unwrap();
        let before = model.head.weight.value.clone();
        let mut opts = TrainClfOptions::new(4);
        opts.epochs = 0;
        let losses = train_classifier(&mut model, &samples, &opts).unwrap();
        assert!(losses.is_empty());
        assert_eq!(model.head.weight.value.data(), before.data());
    }

    #[test]
    fn training_is_deterministic() {
        let samples = separable_samples(4, 8, 4);
        let config = ClassifierConfig {
            n_z: 4,
            views: 1,
            use_xva: false,
            use_se: true,
            seed: 5,
        };
        let mut opts = TrainClfOptions::new(6);
        opts.epochs = 5;
        let mut m1 = ClassifierModel::<f32>::new(config).unwrap();
        let l1 = train_classifier(&mut m1, &samples, &opts).unwrap();
        let mut m2 = ClassifierModel::<f32>::new(config).unwrap();
        let l2 = train_classifier(&mut m2, &samples, &opts).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(
            m1.head.weight.value.data(),
            m2.head.weight.value.data()
        );
    }

    #[test]
    fn single_class_set_is_rejected() {
        let mut samples = separable_samples(3, 6, 4);
        for s in &mut samples {
            s.label = Label::Class0;
        }
        let config = ClassifierConfig {
            n_z: 4,
            views: 1,
            use_xva: false,
            use_se: false,
            seed: 7,
        };
        let mut model = ClassifierModel::<f32>::new(config).unwrap();
        assert!(train_classifier(&mut model, &samples, &TrainClfOptions::new(8)).is_err());
        assert!(train_classifier(&mut model, &samples[..1], &TrainClfOptions::new(8)).is_err());
    }
}
