//! Denoising training loop for the autoencoder and the frozen-model feature
//! extraction pass that follows it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::rng::mix3;
use crate::numerics::{adam_step, Rng, Scalar, Tensor};
use crate::pipeline::noise::{add_noise, NoiseSpec};

use super::{AeModel, PerceptualExtractor};

/// Samples per gradient chunk. Chunks are accumulated sequentially inside a
/// worker and reduced in index order, so the result is independent of how
/// many threads actually ran.
const GRAD_CHUNK: usize = 16;

/// Step-or-plateau learning-rate schedule: starts at `initial`, multiplies
/// by 0.2 after every 20th epoch or after 5 epochs without an improvement in
/// the epoch-mean loss, and never falls below 5e-5.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    lr: f64,
    best: f64,
    stale: usize,
}

impl LrSchedule {
    pub const FACTOR: f64 = 0.2;
    pub const FLOOR: f64 = 5e-5;
    pub const DROP_EVERY: usize = 20;
    pub const PLATEAU_WINDOW: usize = 5;

    pub fn new(initial: f64) -> Self {
        LrSchedule {
            lr: initial,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn current(&self) -> f64 {
        self.lr
    }

    /// Feed the mean loss of the finished epoch (1-based index).
    pub fn end_epoch(&mut self, epoch: usize, epoch_loss: f64) {
        if epoch_loss < self.best {
            self.best = epoch_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if epoch % Self::DROP_EVERY == 0 || self.stale >= Self::PLATEAU_WINDOW {
            self.lr = (self.lr * Self::FACTOR).max(Self::FLOOR);
            self.stale = 0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainAeOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub seed: u64,
}

impl TrainAeOptions {
    pub fn new(seed: u64) -> Self {
        TrainAeOptions {
            epochs: 100,
            batch_size: 128,
            initial_lr: 1e-3,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AeTrainReport {
    /// Mean final loss (reconstruction + perceptual) per epoch.
    pub epoch_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr_trace: Vec<f64>,
}

/// One sample's forward/backward. Gradients accumulate unscaled; the caller
/// divides by the batch size. Returns the sample's final loss.
fn sample_step<T: Scalar>(
    model: &mut AeModel<T>,
    phi: &PerceptualExtractor<T>,
    noisy: &Tensor<T>,
    clean: &Tensor<T>,
    clean_feat: &Tensor<T>,
) -> Result<f64> {
    let (code, enc_cache) = model.encode_with_cache(noisy)?;
    let (recon, dec_cache) = model.decode_with_cache(&code)?;

    // Reconstruction term: ||q - q~||^2 against the CLEAN frame.
    let mut dae = T::zero();
    let mut drecon = recon.clone();
    for (d, (&r, &q)) in drecon
        .data_mut()
        .iter_mut()
        .zip(recon.data().iter().zip(clean.data().iter()))
    {
        let diff = r - q;
        dae += diff * diff;
        *d = T::from_f64(2.0) * diff;
    }

    // Perceptual term through the frozen extractor.
    let (recon_feat, feat_cache) = phi.features_with_cache(&recon)?;
    let m = T::from_f64(recon_feat.len() as f64);
    let mut perc = T::zero();
    let mut dfeat = recon_feat.clone();
    for (d, (&a, &b)) in dfeat
        .data_mut()
        .iter_mut()
        .zip(recon_feat.data().iter().zip(clean_feat.data().iter()))
    {
        let diff = a - b;
        perc += diff * diff;
        *d = T::from_f64(2.0) * diff / m;
    }
    perc /= m;
    drecon.add_assign(&phi.backward_input(&feat_cache, &dfeat));

    let dcode = model.decode_backward(&dec_cache, &drecon);
    model.encode_backward(&enc_cache, &dcode);
    Ok((dae + perc).to_f64())
}

/// Train the denoising autoencoder. Noise applies to the model INPUT only;
/// the loss target stays the clean frame. The perceptual extractor is taken
/// by shared reference and cannot change.
pub fn train_ae<T: Scalar>(
    model: &mut AeModel<T>,
    frames: &[Tensor<T>],
    phi: &PerceptualExtractor<T>,
    noise: &NoiseSpec,
    opts: &TrainAeOptions,
) -> Result<AeTrainReport> {
    if frames.is_empty() {
        return Err(Error::usage("train_ae on an empty dataset"));
    }

    // phi of the clean frames never changes; compute it once.
    let clean_feats: Vec<Tensor<T>> = frames
        .par_iter()
        .map(|f| phi.features(f))
        .collect::<Result<_>>()?;

    let mut shuffle_rng = Rng::new(mix3(opts.seed, 0x5831, 0));
    let mut schedule = LrSchedule::new(opts.initial_lr);
    let mut report = AeTrainReport {
        epoch_loss: Vec::with_capacity(opts.epochs),
        lr_trace: Vec::with_capacity(opts.epochs),
    };
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for epoch in 1..=opts.epochs {
        let lr = schedule.current();
        report.lr_trace.push(lr);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let n = batch.len();
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let results: Vec<Result<(Vec<Tensor<T>>, f64)>> = chunks
                .into_par_iter()
                .map(|chunk| {
                    let mut local = model.clone();
                    local.zero_grads();
                    let mut chunk_loss = 0.0;
                    for &idx in chunk {
                        let mut noise_rng = Rng::new(mix3(noise.rng_seed, epoch as u64, idx as u64));
                        let noisy = add_noise(&frames[idx], noise, &mut noise_rng);
                        chunk_loss +=
                            sample_step(&mut local, phi, &noisy, &frames[idx], &clean_feats[idx])?;
                    }
                    let grads = local
                        .parameters_mut()
                        .into_iter()
                        .map(|p| p.grad.clone())
                        .collect();
                    Ok((grads, chunk_loss))
                })
                .collect();

            model.zero_grads();
            let mut summed: Option<Vec<Tensor<T>>> = None;
            for r in results {
                let (grads, chunk_loss) = r?;
                loss_sum += chunk_loss;
                match &mut summed {
                    None => summed = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads.iter()) {
                            a.add_assign(g);
                        }
                    }
                }
            }
            let summed = summed.expect("non-empty batch");
            let inv_n = T::from_f64(1.0 / n as f64);
            let lr_t = T::from_f64(lr);
            for (p, mut g) in model.parameters_mut().into_iter().zip(summed) {
                g.scale(inv_n);
                p.grad = g;
                adam_step(p, lr_t);
            }
        }

        let epoch_loss = loss_sum / frames.len() as f64;
        report.epoch_loss.push(epoch_loss);
        schedule.end_epoch(epoch, epoch_loss);
    }
    Ok(report)
}

/// Encode every frame of a video with a frozen model: row t of the result is
/// the code of frame t. Extraction applies no noise.
pub fn extract_features<T: Scalar>(model: &AeModel<T>, video: &[Tensor<T>]) -> Result<Tensor<T>> {
    if video.is_empty() {
        return Err(Error::usage("extract_features on a zero-length video"));
    }
    let codes: Vec<Tensor<T>> = video
        .par_iter()
        .map(|frame| model.encode(frame))
        .collect::<Result<_>>()?;
    let t = codes.len();
    let mut data = Vec::with_capacity(t * model.n_z);
    for code in codes {
        data.extend_from_slice(code.data());
    }
    Tensor::from_vec(&[t, model.n_z], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_trace_without_plateau() {
        // Strictly improving losses: drops come only from the 20-epoch rule,
        // and the floor binds at epoch 40 because 4e-5 < 5e-5.
        let mut sched = LrSchedule::new(1e-3);
        let mut trace = Vec::new();
        for epoch in 1..=100 {
            trace.push(sched.current());
            sched.end_epoch(epoch, 1000.0 / epoch as f64);
        }
        let mut want = vec![1e-3; 20];
        want.extend(vec![2e-4; 20]);
        want.extend(vec![5e-5; 60]);
        assert_eq!(trace, want);
    }

    #[test]
    fn lr_plateau_triggers_early_drop() {
        let mut sched = LrSchedule::new(1e-3);
        // One improvement, then flat: stale hits 5 at epoch 6.
        sched.end_epoch(1, 1.0);
        for epoch in 2..=6 {
            sched.end_epoch(epoch, 1.0);
        }
        assert!((sched.current() - 2e-4).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_a_usage_error() {
        let mut model = AeModel::<f32>::new(8, 16, 1).unwrap();
        let phi = PerceptualExtractor::<f32>::random_seeded(2);
        let noise = NoiseSpec::default();
        let err = train_ae(&mut model, &[], &phi, &noise, &TrainAeOptions::new(3));
        assert!(err.is_err());
    }

    #[test]
    fn extract_features_rows_are_per_frame_codes() {
        let model = AeModel::<f32>::new(8, 16, 4).unwrap();
        let mut rng = Rng::new(5);
        let frames: Vec<Tensor<f32>> = (0..3)
            .map(|_| {
                let data = (0..3 * 16 * 16)
                    .map(|_| (rng.uniform() * 2.0 - 1.0) as f32)
                    .collect();
                Tensor::from_vec(&[3, 16, 16], data).unwrap()
            })
            .collect();
        let feats = extract_features(&model, &frames).unwrap();
        assert_eq!(feats.shape(), &[3, 8]);
        // Row t equals encode(frame_t); reversing frames reverses rows.
        let reversed: Vec<Tensor<f32>> = frames.iter().rev().cloned().collect();
        let rev_feats = extract_features(&model, &reversed).unwrap();
        for t in 0..3 {
            assert_eq!(
                &feats.data()[t * 8..(t + 1) * 8],
                &rev_feats.data()[(2 - t) * 8..(2 - t + 1) * 8]
            );
        }
        // Single frame hits the boundary case.
        let one = extract_features(&model, &frames[..1]).unwrap();
        assert_eq!(one.shape(), &[1, 8]);
        assert!(extract_features(&model, &[]).is_err());
    }
}
