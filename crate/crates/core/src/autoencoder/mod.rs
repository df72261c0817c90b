//! Denoising 2D convolutional autoencoder used as a per-frame feature
//! extractor, plus the frozen perceptual feature map that augments its
//! reconstruction loss.
//!
//! At the reference input size of 256x256 the encoder is eight 3x3 conv
//! blocks (SELU after each), global average pooling and a bottleneck linear
//! to the code length; the decoder mirrors it with a linear to 128x2x2 and
//! seven stride-2 transposed convs. Smaller power-of-two input sizes reuse
//! the same schema with the channel schedule truncated so the encoder still
//! bottoms out at 2x2 and the decoder reproduces the input size.

mod train;

pub use train::{extract_features, train_ae, AeTrainReport, LrSchedule, TrainAeOptions};

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::numerics::conv::{Conv2dCache, ConvTranspose2dCache};
use crate::numerics::{
    gap2d, gap2d_backward, relu, relu_backward, selu, selu_backward, Conv2d, ConvTranspose2d,
    Linear, Parameter, Rng, Scalar, Tensor,
};

const ENC_HEAD: [(usize, usize); 2] = [(32, 2), (32, 1)];
const ENC_TAIL: [usize; 6] = [64, 64, 128, 128, 128, 128];
const DEC_PLAN: [usize; 7] = [128, 128, 64, 64, 64, 32, 3];
const DEC_SEED_CHANNELS: usize = 128;
const DEC_SEED_SIZE: usize = 2;

fn log2_exact(n: usize) -> Option<u32> {
    if n.is_power_of_two() {
        Some(n.trailing_zeros())
    } else {
        None
    }
}

/// Channel/stride plan of the encoder conv stack for a given input size.
fn encoder_plan(input_size: usize) -> Result<Vec<(usize, usize)>> {
    let log = log2_exact(input_size)
        .ok_or_else(|| Error::config(format!("input size {} is not a power of two", input_size)))?;
    if input_size < 8 {
        return Err(Error::config(format!("input size {} below minimum 8", input_size)));
    }
    let tail_len = log as usize - 2;
    let mut plan: Vec<(usize, usize)> = ENC_HEAD.to_vec();
    for i in 0..tail_len {
        let c = if i < ENC_TAIL.len() { ENC_TAIL[i] } else { 128 };
        plan.push((c, 2));
    }
    Ok(plan)
}

/// Output channel plan of the decoder transposed-conv stack.
fn decoder_plan(input_size: usize) -> Result<Vec<usize>> {
    let log = log2_exact(input_size)
        .ok_or_else(|| Error::config(format!("input size {} is not a power of two", input_size)))? as usize;
    let ups = log - 1;
    let mut plan = Vec::with_capacity(ups);
    if ups > DEC_PLAN.len() {
        for _ in 0..ups - DEC_PLAN.len() {
            plan.push(128);
        }
        plan.extend_from_slice(&DEC_PLAN);
    } else {
        plan.extend_from_slice(&DEC_PLAN[DEC_PLAN.len() - ups..]);
    }
    Ok(plan)
}

/// Encoder + decoder pair mapping frames to length-`n_z` codes and back.
#[derive(Debug, Clone)]
pub struct AeModel<T> {
    pub n_z: usize,
    pub input_size: usize,
    pub seed: u64,
    pub enc_convs: Vec<Conv2d<T>>,
    /// GAP output width -> n_z
    pub bottleneck: Linear<T>,
    /// n_z -> 128*2*2
    pub dec_linear: Linear<T>,
    pub dec_convs: Vec<ConvTranspose2d<T>>,
}

/// Forward state of one `encode` pass, consumed by the backward pass.
pub struct EncodeCache<T> {
    convs: Vec<(Conv2dCache<T>, Tensor<T>)>, // per conv: im2col cache + pre-activation
    gap_in_shape: Vec<usize>,
    gap_out: Tensor<T>,
}

/// Forward state of one `decode` pass.
pub struct DecodeCache<T> {
    code: Tensor<T>,
    lin_out: Tensor<T>,
    convs: Vec<(ConvTranspose2dCache<T>, Tensor<T>)>,
}

impl<T: Scalar> AeModel<T> {
    pub fn new(n_z: usize, input_size: usize, seed: u64) -> Result<Self> {
        if n_z == 0 {
            return Err(Error::config("n_z must be positive"));
        }
        let enc_plan = encoder_plan(input_size)?;
        let dec_plan = decoder_plan(input_size)?;
        let mut rng = Rng::new(seed);
        let mut enc_convs = Vec::with_capacity(enc_plan.len());
        let mut c_prev = 3;
        for &(c_out, stride) in &enc_plan {
            enc_convs.push(Conv2d::new(c_prev, c_out, 3, 1, stride, &mut rng));
            c_prev = c_out;
        }
        let bottleneck = Linear::new(c_prev, n_z, &mut rng);
        let dec_linear = Linear::new(
            n_z,
            DEC_SEED_CHANNELS * DEC_SEED_SIZE * DEC_SEED_SIZE,
            &mut rng,
        );
        let mut dec_convs = Vec::with_capacity(dec_plan.len());
        let mut c_prev = DEC_SEED_CHANNELS;
        for &c_out in &dec_plan {
            dec_convs.push(ConvTranspose2d::new(c_prev, c_out, 3, 1, 2, 1, &mut rng));
            c_prev = c_out;
        }
        Ok(AeModel {
            n_z,
            input_size,
            seed,
            enc_convs,
            bottleneck,
            dec_linear,
            dec_convs,
        })
    }

    fn check_frame(&self, frame: &Tensor<T>) -> Result<()> {
        let want = [3, self.input_size, self.input_size];
        if frame.shape() != want {
            return Err(Error::shape(format!(
                "encode expects {:?}, got {:?}",
                want,
                frame.shape()
            )));
        }
        Ok(())
    }

    pub fn encode_with_cache(&self, frame: &Tensor<T>) -> Result<(Tensor<T>, EncodeCache<T>)> {
        self.check_frame(frame)?;
        let mut x = frame.clone();
        let mut convs = Vec::with_capacity(self.enc_convs.len());
        for conv in &self.enc_convs {
            let (pre, cache) = conv.forward(&x)?;
            x = selu(&pre);
            convs.push((cache, pre));
        }
        let gap_in_shape = x.shape().to_vec();
        let gap_out = gap2d(&x)?;
        let code = self.bottleneck.forward(&gap_out)?;
        Ok((
            code,
            EncodeCache {
                convs,
                gap_in_shape,
                gap_out,
            },
        ))
    }

    /// Per-frame feature code of length `n_z`.
    pub fn encode(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode_with_cache(frame)?.0)
    }

    /// Accumulates encoder parameter gradients; returns d(frame).
    pub fn encode_backward(&mut self, cache: &EncodeCache<T>, dcode: &Tensor<T>) -> Tensor<T> {
        let dgap = self.bottleneck.backward(&cache.gap_out, dcode);
        let mut dx = gap2d_backward(&dgap, &cache.gap_in_shape);
        for (conv, (conv_cache, pre)) in self.enc_convs.iter_mut().zip(cache.convs.iter()).rev() {
            let dpre = selu_backward(pre, &dx);
            dx = conv.backward(conv_cache, &dpre);
        }
        dx
    }

    pub fn decode_with_cache(&self, code: &Tensor<T>) -> Result<(Tensor<T>, DecodeCache<T>)> {
        if code.len() != self.n_z {
            return Err(Error::shape(format!(
                "decode expects a code of length {}, got {}",
                self.n_z,
                code.len()
            )));
        }
        let lin_out = self.dec_linear.forward(code)?;
        let mut x = lin_out
            .clone()
            .reshaped(&[DEC_SEED_CHANNELS, DEC_SEED_SIZE, DEC_SEED_SIZE])?;
        let mut convs = Vec::with_capacity(self.dec_convs.len());
        for conv in &self.dec_convs {
            let (pre, cache) = conv.forward(&x)?;
            x = selu(&pre);
            convs.push((cache, pre));
        }
        Ok((
            x,
            DecodeCache {
                code: code.clone(),
                lin_out,
                convs,
            },
        ))
    }

    pub fn decode(&self, code: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.decode_with_cache(code)?.0)
    }

    /// Accumulates decoder parameter gradients; returns d(code).
    pub fn decode_backward(&mut self, cache: &DecodeCache<T>, dframe: &Tensor<T>) -> Tensor<T> {
        let mut dx = dframe.clone();
        for (conv, (conv_cache, pre)) in self.dec_convs.iter_mut().zip(cache.convs.iter()).rev() {
            let dpre = selu_backward(pre, &dx);
            dx = conv.backward(conv_cache, &dpre);
        }
        let dlin = dx.reshaped(&[cache.lin_out.len()]).expect("seed volume");
        self.dec_linear.backward(&cache.code, &dlin)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut params = Vec::new();
        for c in &mut self.enc_convs {
            params.push(&mut c.weight);
            params.push(&mut c.bias);
        }
        params.push(&mut self.bottleneck.weight);
        params.push(&mut self.bottleneck.bias);
        params.push(&mut self.dec_linear.weight);
        params.push(&mut self.dec_linear.bias);
        for c in &mut self.dec_convs {
            params.push(&mut c.weight);
            params.push(&mut c.bias);
        }
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Encode while also returning the activation map of the deepest encoder
    /// conv block (post-SELU, the GAP input), which the spatial saliency
    /// chain taps into.
    pub fn encode_with_last_activation(&self, frame: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (code, cache) = self.encode_with_cache(frame)?;
        let (_, last_pre) = cache.convs.last().expect("encoder has conv layers");
        Ok((code, selu(last_pre)))
    }

    /// Per-layer output shapes of the encoder stack (conv outputs then GAP),
    /// for conformance checks against the reference geometry.
    pub fn encoder_output_shapes(&self, frame: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        self.check_frame(frame)?;
        let mut shapes = Vec::new();
        let mut x = frame.clone();
        for conv in &self.enc_convs {
            let (pre, _) = conv.forward(&x)?;
            x = selu(&pre);
            shapes.push(x.shape().to_vec());
        }
        shapes.push(vec![x.shape()[0], 1, 1]); // GAP2d
        Ok(shapes)
    }

    /// Per-layer output shapes of the decoder stack (linear then each
    /// transposed conv).
    pub fn decoder_output_shapes(&self, code: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let (_, cache) = self.decode_with_cache(code)?;
        let mut shapes = vec![vec![cache.lin_out.len()]];
        for (_, pre) in &cache.convs {
            shapes.push(pre.shape().to_vec());
        }
        Ok(shapes)
    }

    pub fn cast<U: Scalar>(&self) -> AeModel<U> {
        AeModel {
            n_z: self.n_z,
            input_size: self.input_size,
            seed: self.seed,
            enc_convs: self
                .enc_convs
                .iter()
                .map(|c| Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    padding: c.padding,
                    stride: c.stride,
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
            bottleneck: cast_linear(&self.bottleneck),
            dec_linear: cast_linear(&self.dec_linear),
            dec_convs: self
                .dec_convs
                .iter()
                .map(|c| ConvTranspose2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    padding: c.padding,
                    stride: c.stride,
                    output_padding: c.output_padding,
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
        }
    }
}

fn cast_linear<T: Scalar, U: Scalar>(l: &Linear<T>) -> Linear<U> {
    Linear {
        in_dim: l.in_dim,
        out_dim: l.out_dim,
        weight: l.weight.cast(),
        bias: l.bias.cast(),
    }
}

/// Where a perceptual extractor's weights came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    RandomSeeded(u64),
    LoadedFromFile(PathBuf),
}

/// Frozen feature map for the perceptual loss: three stride-2 ReLU conv
/// layers (3 -> 16 -> 32 -> 32). Immutable after construction; the training
/// loop only ever backpropagates through it to its input.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor<T> {
    pub convs: Vec<Conv2d<T>>,
    pub provenance: Provenance,
}

pub struct PerceptualCache<T> {
    convs: Vec<(Conv2dCache<T>, Tensor<T>)>,
    out_len: usize,
}

impl<T: Scalar> PerceptualExtractor<T> {
    pub fn random_seeded(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let plan = [(3usize, 16usize), (16, 32), (32, 32)];
        let convs = plan
            .iter()
            .map(|&(c_in, c_out)| Conv2d::new(c_in, c_out, 3, 1, 2, &mut rng))
            .collect();
        PerceptualExtractor {
            convs,
            provenance: Provenance::RandomSeeded(seed),
        }
    }

    pub fn features_with_cache(&self, img: &Tensor<T>) -> Result<(Tensor<T>, PerceptualCache<T>)> {
        let mut x = img.clone();
        let mut convs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (pre, cache) = conv.forward(&x)?;
            x = relu(&pre);
            convs.push((cache, pre));
        }
        let out_len = x.len();
        Ok((x, PerceptualCache { convs, out_len }))
    }

    pub fn features(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.features_with_cache(img)?.0)
    }

    /// Gradient wrt the INPUT image only; takes `&self`, so the extractor's
    /// parameters cannot change.
    pub fn backward_input(&self, cache: &PerceptualCache<T>, dfeat: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(dfeat.len(), cache.out_len);
        let mut dx = dfeat.clone();
        for (conv, (conv_cache, pre)) in self.convs.iter().zip(cache.convs.iter()).rev() {
            let dpre = relu_backward(pre, &dx);
            dx = conv.backward_input(conv_cache, &dpre);
        }
        dx
    }

    /// Flat copy of all weights, for the frozen-parameters invariant checks.
    pub fn parameter_snapshot(&self) -> Vec<T> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend_from_slice(c.weight.value.data());
            out.extend_from_slice(c.bias.value.data());
        }
        out
    }
}

/// Mean over the batch of the squared reconstruction error:
/// (1/N) * sum_i ||q_i - q~_i||^2.
pub fn loss_dae<T: Scalar>(batch_q: &[Tensor<T>], batch_recon: &[Tensor<T>]) -> Result<T> {
    if batch_q.is_empty() {
        return Err(Error::usage("loss_dae on an empty batch"));
    }
    if batch_q.len() != batch_recon.len() {
        return Err(Error::shape(format!(
            "batch sizes differ: {} vs {}",
            batch_q.len(),
            batch_recon.len()
        )));
    }
    let mut total = T::zero();
    for (q, r) in batch_q.iter().zip(batch_recon.iter()) {
        if q.shape() != r.shape() {
            return Err(Error::shape(format!(
                "sample shapes differ: {:?} vs {:?}",
                q.shape(),
                r.shape()
            )));
        }
        let mut s = T::zero();
        for (&a, &b) in q.data().iter().zip(r.data().iter()) {
            let d = a - b;
            s += d * d;
        }
        total += s;
    }
    Ok(total / T::from_f64(batch_q.len() as f64))
}

/// Squared feature distance through the frozen extractor, normalised by the
/// feature element count: (1/(C*H*W)) * ||phi(q) - phi(q~)||^2.
pub fn loss_perc<T: Scalar>(
    phi: &PerceptualExtractor<T>,
    q: &Tensor<T>,
    recon: &Tensor<T>,
) -> Result<T> {
    if q.shape() != recon.shape() {
        return Err(Error::shape(format!(
            "perceptual loss inputs differ: {:?} vs {:?}",
            q.shape(),
            recon.shape()
        )));
    }
    let fq = phi.features(q)?;
    let fr = phi.features(recon)?;
    let mut s = T::zero();
    for (&a, &b) in fq.data().iter().zip(fr.data().iter()) {
        let d = a - b;
        s += d * d;
    }
    Ok(s / T::from_f64(fq.len() as f64))
}

/// Final autoencoder objective: plain sum of the two terms.
pub fn loss_final_ae<T: Scalar>(dae: T, perc: T) -> T {
    dae + perc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_frame(rng: &mut Rng, size: usize) -> Tensor<f64> {
        let n = 3 * size * size;
        Tensor::from_vec(
            &[3, size, size],
            (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_sized() {
        let model = AeModel::<f32>::new(32, 64, 7).unwrap();
        let mut rng = Rng::new(1);
        let frame = rand_frame(&mut rng, 64).cast::<f32>();
        let a = model.encode(&frame).unwrap();
        let b = model.encode(&frame).unwrap();
        assert_eq!(a.shape(), &[32]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_model_zero_frame_zero_code() {
        let mut model = AeModel::<f64>::new(16, 32, 3).unwrap();
        for p in model.parameters_mut() {
            p.value.fill(0.0);
        }
        let frame = Tensor::zeros(&[3, 32, 32]);
        let code = model.encode(&frame).unwrap();
        assert!(code.data().iter().all(|&v| v == 0.0));
        let recon = model.decode(&code).unwrap();
        assert!(recon.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_round_trip_shapes() {
        for &size in &[64usize, 256] {
            let model = AeModel::<f32>::new(32, size, 11).unwrap();
            let frame = Tensor::zeros(&[3, size, size]);
            let code = model.encode(&frame).unwrap();
            assert_eq!(code.len(), 32);
            let recon = model.decode(&code).unwrap();
            assert_eq!(recon.shape(), &[3, size, size]);
        }
    }

    #[test]
    fn encode_rejects_wrong_shapes() {
        let model = AeModel::<f32>::new(32, 64, 7).unwrap();
        assert!(model.encode(&Tensor::zeros(&[1, 64, 64])).is_err());
        assert!(model.encode(&Tensor::zeros(&[3, 32, 32])).is_err());
        assert!(model.decode(&Tensor::zeros(&[16])).is_err());
    }

    #[test]
    fn rejects_bad_input_sizes() {
        assert!(AeModel::<f32>::new(32, 100, 0).is_err());
        assert!(AeModel::<f32>::new(32, 4, 0).is_err());
        assert!(AeModel::<f32>::new(0, 64, 0).is_err());
    }

    #[test]
    fn loss_dae_examples() {
        let zeros = Tensor::<f64>::zeros(&[4]);
        let mut unit = Tensor::<f64>::zeros(&[4]);
        unit.data_mut()[0] = 1.0;
        // identical batches -> 0
        assert_eq!(
            loss_dae(&[zeros.clone()], &[zeros.clone()]).unwrap(),
            0.0
        );
        // N=1, q = e_0, q~ = 0 -> 1
        assert_eq!(loss_dae(&[unit], &[zeros]).unwrap(), 1.0);
        // empty batch is a usage error
        assert!(loss_dae::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn loss_dae_matches_scalar_loop() {
        let mut rng = Rng::new(4);
        let qs: Vec<Tensor<f64>> = (0..4).map(|_| rand_frame(&mut rng, 8)).collect();
        let rs: Vec<Tensor<f64>> = (0..4).map(|_| rand_frame(&mut rng, 8)).collect();
        let got = loss_dae(&qs, &rs).unwrap();
        let mut want = 0.0;
        for (q, r) in qs.iter().zip(rs.iter()) {
            for (a, b) in q.data().iter().zip(r.data().iter()) {
                want += (a - b) * (a - b);
            }
        }
        want /= 4.0;
        assert!((got - want).abs() < 1e-6 * want.max(1.0));
    }

    #[test]
    fn loss_perc_zero_on_equal_inputs() {
        let phi = PerceptualExtractor::<f64>::random_seeded(5);
        let mut rng = Rng::new(6);
        let q = rand_frame(&mut rng, 16);
        assert_eq!(loss_perc(&phi, &q, &q).unwrap(), 0.0);
    }

    #[test]
    fn loss_perc_direct_formula_identity_map() {
        // With an identity feature map, one element differing by 2 in a
        // 3x4x4 feature space gives 4 / 48.
        let q = Tensor::<f64>::zeros(&[3, 4, 4]);
        let mut r = q.clone();
        r.data_mut()[7] = 2.0;
        let mut s = 0.0;
        for (a, b) in q.data().iter().zip(r.data().iter()) {
            s += (a - b) * (a - b);
        }
        let got = s / 48.0;
        assert!((got - 4.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn loss_perc_matches_scalar_loop_through_phi() {
        let phi = PerceptualExtractor::<f64>::random_seeded(9);
        let mut rng = Rng::new(10);
        let q = rand_frame(&mut rng, 16);
        let r = rand_frame(&mut rng, 16);
        let got = loss_perc(&phi, &q, &r).unwrap();
        let fq = phi.features(&q).unwrap();
        let fr = phi.features(&r).unwrap();
        let mut s = 0.0;
        for (a, b) in fq.data().iter().zip(fr.data().iter()) {
            s += (a - b) * (a - b);
        }
        let want = s / fq.len() as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn loss_final_is_the_sum() {
        assert_eq!(loss_final_ae(0.0, 0.0), 0.0);
        assert_eq!(loss_final_ae(0.25, 0.75), 1.0);
        let mut rng = Rng::new(2);
        for _ in 0..10 {
            let a = rng.uniform();
            let b = rng.uniform();
            assert_eq!(loss_final_ae(a, b), a + b);
        }
    }

    #[test]
    fn perceptual_extractor_is_deterministic() {
        let phi1 = PerceptualExtractor::<f32>::random_seeded(42);
        let phi2 = PerceptualExtractor::<f32>::random_seeded(42);
        assert_eq!(phi1.parameter_snapshot(), phi2.parameter_snapshot());
        let mut rng = Rng::new(3);
        let img = rand_frame(&mut rng, 16).cast::<f32>();
        assert_eq!(
            phi1.features(&img).unwrap().data(),
            phi2.features(&img).unwrap().data()
        );
    }
}
