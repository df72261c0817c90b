//! Temporal 1D convolutional classifier over per-view feature sequences.
//!
//! Each view gets its own two-block conv stem (Conv1D + ReLU + SE). The view
//! outputs are fused either by cross-view attention over all unordered view
//! pairs, by plain channel concatenation (the "w/o xVA" ablation), or passed
//! through unchanged for a single view. A final conv block, global average
//! pooling and a linear head produce the two-class softmax.

mod train;

pub use train::{train_classifier, TrainClfOptions};

use crate::error::{Error, Result};
use crate::numerics::conv::Conv1dCache;
use crate::numerics::matmul::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::numerics::{
    gap1d, gap1d_backward, relu, relu_backward, sigmoid, softmax_axis, softmax_backward_axis,
    Conv1d, Linear, Parameter, Rng, Scalar, Tensor,
};

pub const STEM_WIDTH: usize = 64;
pub const POST_WIDTH: usize = 128;
pub const SE_REDUCTION: usize = 4;
pub const NUM_CLASSES: usize = 2;

/// Binary class label. `Class1` is the positive class of whichever task the
/// dataset encodes (expert for expert/novice, success for success/failure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Class0,
    Class1,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Class0 => 0,
            Label::Class1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Class0
        } else {
            Label::Class1
        }
    }
}

/// Camera viewpoint of one feature sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewId {
    Left,
    Right,
    Front,
    Head,
}

impl ViewId {
    pub fn code(self) -> u8 {
        match self {
            ViewId::Left => 0,
            ViewId::Right => 1,
            ViewId::Front => 2,
            ViewId::Head => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<ViewId> {
        match c {
            0 => Some(ViewId::Left),
            1 => Some(ViewId::Right),
            2 => Some(ViewId::Front),
            3 => Some(ViewId::Head),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewId::Left => "left",
            ViewId::Right => "right",
            ViewId::Front => "front",
            ViewId::Head => "head",
        }
    }
}

/// One view's feature sequence: T rows of length n_z.
#[derive(Debug, Clone)]
pub struct ViewFeatureSequence<T> {
    pub view_id: ViewId,
    pub features: Tensor<T>,
}

/// The classifier's input unit: one trial with its time-synchronised views
/// and a binary label.
#[derive(Debug, Clone)]
pub struct MultiViewSample<T> {
    pub trial_id: String,
    pub subject_id: String,
    pub views: Vec<ViewFeatureSequence<T>>,
    pub label: Label,
}

/// Squeeze-and-excitation gate over [T, C]: pool over time, bottleneck
/// through C/r, sigmoid back to per-channel scales in (0, 1).
#[derive(Debug, Clone)]
pub struct SeBlock<T> {
    pub channels: usize,
    pub reduction: usize,
    /// [C/r, C]
    pub w1: Parameter<T>,
    /// [C, C/r]
    pub w2: Parameter<T>,
}

pub struct SeCache<T> {
    input: Tensor<T>,
    z: Tensor<T>,
    h_pre: Tensor<T>,
    h: Tensor<T>,
    s: Tensor<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::config(format!(
                "SE channels {} not divisible by reduction {}",
                channels, reduction
            )));
        }
        let hidden = channels / reduction;
        let std1 = (2.0 / channels as f64).sqrt();
        let std2 = (2.0 / hidden as f64).sqrt();
        let w1 = (0..hidden * channels)
            .map(|_| T::from_f64(rng.normal() * std1))
            .collect();
        let w2 = (0..channels * hidden)
            .map(|_| T::from_f64(rng.normal() * std2))
            .collect();
        Ok(SeBlock {
            channels,
            reduction,
            w1: Parameter::new(Tensor::from_vec(&[hidden, channels], w1)?),
            w2: Parameter::new(Tensor::from_vec(&[channels, hidden], w2)?),
        })
    }

    pub fn forward(&self, u: &Tensor<T>) -> Result<(Tensor<T>, SeCache<T>)> {
        let shape = u.shape();
        if shape.len() != 2 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "SE expects [T, {}], got {:?}",
                self.channels, shape
            )));
        }
        let z = gap1d(u)?;
        let hidden = self.channels / self.reduction;
        // h = relu(W1 z)
        let mut h_pre = vec![T::zero(); hidden];
        for (i, hv) in h_pre.iter_mut().enumerate() {
            let row = &self.w1.value.data()[i * self.channels..(i + 1) * self.channels];
            *hv = crate::numerics::matmul::dot(row, z.data());
        }
        let h_pre = Tensor::from_vec(&[hidden], h_pre)?;
        let h = relu(&h_pre);
        // s = sigmoid(W2 h)
        let mut s_pre = vec![T::zero(); self.channels];
        for (c, sv) in s_pre.iter_mut().enumerate() {
            let row = &self.w2.value.data()[c * hidden..(c + 1) * hidden];
            *sv = crate::numerics::matmul::dot(row, h.data());
        }
        let s = sigmoid(&Tensor::from_vec(&[self.channels], s_pre)?);
        // y[t, c] = u[t, c] * s[c]
        let t_len = shape[0];
        let mut out = u.clone();
        for t in 0..t_len {
            let row = &mut out.data_mut()[t * self.channels..(t + 1) * self.channels];
            for (o, &g) in row.iter_mut().zip(s.data().iter()) {
                *o *= g;
            }
        }
        Ok((
            out,
            SeCache {
                input: u.clone(),
                z,
                h_pre,
                h,
                s,
            },
        ))
    }

    pub fn backward(&mut self, cache: &SeCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let t_len = cache.input.shape()[0];
        let c_len = self.channels;
        let hidden = c_len / self.reduction;
        let s = cache.s.data();
        let u = cache.input.data();
        let g = dy.data();

        // Direct path and the gate's pooled sensitivity.
        let mut dx = dy.clone();
        let mut ds = vec![T::zero(); c_len];
        for t in 0..t_len {
            for c in 0..c_len {
                let idx = t * c_len + c;
                dx.data_mut()[idx] = g[idx] * s[c];
                ds[c] += g[idx] * u[idx];
            }
        }
        // Through the sigmoid.
        let mut ds_pre = ds;
        for (d, &sv) in ds_pre.iter_mut().zip(s.iter()) {
            *d = *d * sv * (T::one() - sv);
        }
        // W2: dW2 += ds_pre (x) h ; dh = W2^T ds_pre
        let mut dh = vec![T::zero(); hidden];
        {
            let w2 = self.w2.value.data();
            let dw2 = self.w2.grad.data_mut();
            for c in 0..c_len {
                let gz = ds_pre[c];
                if gz == T::zero() {
                    continue;
                }
                let row = c * hidden;
                for j in 0..hidden {
                    dw2[row + j] += gz * cache.h.data()[j];
                    dh[j] += gz * w2[row + j];
                }
            }
        }
        // ReLU
        for (d, &p) in dh.iter_mut().zip(cache.h_pre.data().iter()) {
            if p <= T::zero() {
                *d = T::zero();
            }
        }
        // W1: dW1 += dh (x) z ; dz = W1^T dh
        let mut dz = vec![T::zero(); c_len];
        {
            let w1 = self.w1.value.data();
            let dw1 = self.w1.grad.data_mut();
            for j in 0..hidden {
                let gj = dh[j];
                if gj == T::zero() {
                    continue;
                }
                let row = j * c_len;
                for c in 0..c_len {
                    dw1[row + c] += gj * cache.z.data()[c];
                    dz[c] += gj * w1[row + c];
                }
            }
        }
        // Pooled path spreads evenly over time.
        let inv_t = T::from_f64(1.0 / t_len as f64);
        for t in 0..t_len {
            for c in 0..c_len {
                dx.data_mut()[t * c_len + c] += dz[c] * inv_t;
            }
        }
        dx
    }
}

pub struct XvaCache<T> {
    v1: Tensor<T>,
    v2: Tensor<T>,
    m1: Tensor<T>,
    m2: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
}

/// Cross-view attention fusion of two [T, C] feature sequences into [T, 2C]:
/// similarity scores between the views become row-softmax attention masks;
/// each view is gated by the other view's attended features and the two
/// outputs are concatenated per timestep.
pub fn xva_forward<T: Scalar>(v1: &Tensor<T>, v2: &Tensor<T>) -> Result<(Tensor<T>, XvaCache<T>)> {
    if v1.shape() != v2.shape() || v1.shape().len() != 2 {
        return Err(Error::shape(format!(
            "xva_fuse expects two equal [T, C] tensors, got {:?} and {:?}",
            v1.shape(),
            v2.shape()
        )));
    }
    let t = v1.shape()[0];
    let c = v1.shape()[1];

    // S1[i, j] = <v1[i], v2[j]>
    let mut s1 = vec![T::zero(); t * t];
    matmul_nt_acc(v1.data(), v2.data(), t, c, t, &mut s1);
    let s1 = Tensor::from_vec(&[t, t], s1)?;
    let m1 = softmax_axis(&s1, 1);
    let mut a1 = vec![T::zero(); t * c];
    matmul_acc(m1.data(), v2.data(), t, t, c, &mut a1);
    let a1 = Tensor::from_vec(&[t, c], a1)?;

    // Mirror branch with the roles swapped: S2 = S1^T but its own row softmax.
    let mut s2 = vec![T::zero(); t * t];
    matmul_nt_acc(v2.data(), v1.data(), t, c, t, &mut s2);
    let s2 = Tensor::from_vec(&[t, t], s2)?;
    let m2 = softmax_axis(&s2, 1);
    let mut a2 = vec![T::zero(); t * c];
    matmul_acc(m2.data(), v1.data(), t, t, c, &mut a2);
    let a2 = Tensor::from_vec(&[t, c], a2)?;

    // y = [a1 (.) v1 | a2 (.) v2]
    let mut y = vec![T::zero(); t * 2 * c];
    for row in 0..t {
        let y_row = &mut y[row * 2 * c..(row + 1) * 2 * c];
        for ch in 0..c {
            y_row[ch] = a1.data()[row * c + ch] * v1.data()[row * c + ch];
            y_row[c + ch] = a2.data()[row * c + ch] * v2.data()[row * c + ch];
        }
    }
    Ok((
        Tensor::from_vec(&[t, 2 * c], y)?,
        XvaCache {
            v1: v1.clone(),
            v2: v2.clone(),
            m1,
            m2,
            a1,
            a2,
        },
    ))
}

/// The fused output alone (the operation surface other modules call).
pub fn xva_fuse<T: Scalar>(v1: &Tensor<T>, v2: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(xva_forward(v1, v2)?.0)
}

pub fn xva_backward<T: Scalar>(cache: &XvaCache<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let t = cache.v1.shape()[0];
    let c = cache.v1.shape()[1];
    debug_assert_eq!(dy.shape(), &[t, 2 * c]);

    let mut dv1 = Tensor::zeros(&[t, c]);
    let mut dv2 = Tensor::zeros(&[t, c]);
    let mut do1 = vec![T::zero(); t * c];
    let mut do2 = vec![T::zero(); t * c];
    for row in 0..t {
        let dy_row = &dy.data()[row * 2 * c..(row + 1) * 2 * c];
        do1[row * c..(row + 1) * c].copy_from_slice(&dy_row[..c]);
        do2[row * c..(row + 1) * c].copy_from_slice(&dy_row[c..]);
    }

    // Branch 1: o1 = a1 (.) v1, a1 = m1 v2, m1 = softmax_rows(v1 v2^T)
    let mut da1 = vec![T::zero(); t * c];
    for i in 0..t * c {
        dv1.data_mut()[i] += do1[i] * cache.a1.data()[i];
        da1[i] = do1[i] * cache.v1.data()[i];
    }
    let mut dm1 = vec![T::zero(); t * t];
    matmul_nt_acc(&da1, cache.v2.data(), t, c, t, &mut dm1);
    matmul_tn_acc(cache.m1.data(), &da1, t, t, c, dv2.data_mut());
    let ds1 = softmax_backward_axis(
        &cache.m1,
        &Tensor::from_vec(&[t, t], dm1).expect("dm1 shape"),
        1,
    );
    matmul_acc(ds1.data(), cache.v2.data(), t, t, c, dv1.data_mut());
    matmul_tn_acc(ds1.data(), cache.v1.data(), t, t, c, dv2.data_mut());

    // Branch 2 with the roles swapped.
    let mut da2 = vec![T::zero(); t * c];
    for i in 0..t * c {
        dv2.data_mut()[i] += do2[i] * cache.a2.data()[i];
        da2[i] = do2[i] * cache.v2.data()[i];
    }
    let mut dm2 = vec![T::zero(); t * t];
    matmul_nt_acc(&da2, cache.v1.data(), t, c, t, &mut dm2);
    matmul_tn_acc(cache.m2.data(), &da2, t, t, c, dv1.data_mut());
    let ds2 = softmax_backward_axis(
        &cache.m2,
        &Tensor::from_vec(&[t, t], dm2).expect("dm2 shape"),
        1,
    );
    matmul_acc(ds2.data(), cache.v1.data(), t, t, c, dv2.data_mut());
    matmul_tn_acc(ds2.data(), cache.v2.data(), t, t, c, dv1.data_mut());

    (dv1, dv2)
}

/// Per-view stem: two Conv1D + ReLU blocks, each followed by SE when enabled.
#[derive(Debug, Clone)]
pub struct ViewStem<T> {
    pub conv1: Conv1d<T>,
    pub se1: Option<SeBlock<T>>,
    pub conv2: Conv1d<T>,
    pub se2: Option<SeBlock<T>>,
}

pub struct StemCache<T> {
    conv1: Conv1dCache<T>,
    pre1: Tensor<T>,
    se1: Option<SeCache<T>>,
    conv2: Conv1dCache<T>,
    pre2: Tensor<T>,
    se2: Option<SeCache<T>>,
}

impl<T: Scalar> ViewStem<T> {
    fn new(n_z: usize, use_se: bool, rng: &mut Rng) -> Result<Self> {
        let conv1 = Conv1d::new(n_z, STEM_WIDTH, 3, 1, 1, rng);
        let se1 = if use_se {
            Some(SeBlock::new(STEM_WIDTH, SE_REDUCTION, rng)?)
        } else {
            None
        };
        let conv2 = Conv1d::new(STEM_WIDTH, STEM_WIDTH, 3, 1, 1, rng);
        let se2 = if use_se {
            Some(SeBlock::new(STEM_WIDTH, SE_REDUCTION, rng)?)
        } else {
            None
        };
        Ok(ViewStem {
            conv1,
            se1,
            conv2,
            se2,
        })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, StemCache<T>)> {
        let (pre1, conv1_cache) = self.conv1.forward(x)?;
        let mut u = relu(&pre1);
        let se1_cache = match &self.se1 {
            Some(se) => {
                let (out, cache) = se.forward(&u)?;
                u = out;
                Some(cache)
            }
            None => None,
        };
        let (pre2, conv2_cache) = self.conv2.forward(&u)?;
        let mut v = relu(&pre2);
        let se2_cache = match &self.se2 {
            Some(se) => {
                let (out, cache) = se.forward(&v)?;
                v = out;
                Some(cache)
            }
            None => None,
        };
        Ok((
            v,
            StemCache {
                conv1: conv1_cache,
                pre1,
                se1: se1_cache,
                conv2: conv2_cache,
                pre2,
                se2: se2_cache,
            },
        ))
    }

    fn backward(&mut self, cache: &StemCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut d = dy.clone();
        if let (Some(se), Some(se_cache)) = (&mut self.se2, &cache.se2) {
            d = se.backward(se_cache, &d);
        }
        let dpre2 = relu_backward(&cache.pre2, &d);
        let mut d = self.conv2.backward(&cache.conv2, &dpre2);
        if let (Some(se), Some(se_cache)) = (&mut self.se1, &cache.se1) {
            d = se.backward(se_cache, &d);
        }
        let dpre1 = relu_backward(&cache.pre1, &d);
        self.conv1.backward(&cache.conv1, &dpre1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub n_z: usize,
    pub views: usize,
    pub use_xva: bool,
    pub use_se: bool,
    pub seed: u64,
}

/// Which attention mechanism to strip for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Xva,
    Se,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel<T> {
    pub config: ClassifierConfig,
    pub stems: Vec<ViewStem<T>>,
    pub post_conv: Conv1d<T>,
    pub post_se: Option<SeBlock<T>>,
    /// [NUM_CLASSES x POST_WIDTH]
    pub head: Linear<T>,
}

enum FusionCache<T> {
    Single,
    Concat,
    Xva(Vec<((usize, usize), XvaCache<T>)>),
}

pub struct ClassifyCache<T> {
    stems: Vec<StemCache<T>>,
    stem_outs: Vec<Tensor<T>>,
    fusion: FusionCache<T>,
    post_conv: Conv1dCache<T>,
    post_pre: Tensor<T>,
    post_se: Option<SeCache<T>>,
    pooled_in_shape: Vec<usize>,
    pooled: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        if config.views == 0 {
            return Err(Error::config("classifier needs at least one view"));
        }
        if config.n_z == 0 {
            return Err(Error::config("n_z must be positive"));
        }
        let mut rng = Rng::new(config.seed);
        let mut stems = Vec::with_capacity(config.views);
        for _ in 0..config.views {
            stems.push(ViewStem::new(config.n_z, config.use_se, &mut rng)?);
        }
        let fusion_width = Self::fusion_width(&config);
        let post_conv = Conv1d::new(fusion_width, POST_WIDTH, 3, 1, 1, &mut rng);
        let post_se = if config.use_se {
            Some(SeBlock::new(POST_WIDTH, SE_REDUCTION, &mut rng)?)
        } else {
            None
        };
        let head = Linear::new(POST_WIDTH, NUM_CLASSES, &mut rng);
        Ok(ClassifierModel {
            config,
            stems,
            post_conv,
            post_se,
            head,
        })
    }

    pub fn fusion_width(config: &ClassifierConfig) -> usize {
        if config.views == 1 {
            STEM_WIDTH
        } else if config.use_xva {
            let pairs = config.views * (config.views - 1) / 2;
            pairs * 2 * STEM_WIDTH
        } else {
            config.views * STEM_WIDTH
        }
    }

    fn check_sample(&self, views: &[Tensor<T>]) -> Result<usize> {
        if views.is_empty() {
            return Err(Error::usage("sample has no views"));
        }
        if views.len() != self.config.views {
            return Err(Error::shape(format!(
                "model wants {} views, sample has {}",
                self.config.views,
                views.len()
            )));
        }
        let t = views[0].shape()[0];
        for v in views {
            let shape = v.shape();
            if shape.len() != 2 || shape[1] != self.config.n_z {
                return Err(Error::shape(format!(
                    "view features must be [T, {}], got {:?}",
                    self.config.n_z, shape
                )));
            }
            if shape[0] != t {
                return Err(Error::shape(format!(
                    "views disagree on sequence length: {} vs {}",
                    t, shape[0]
                )));
            }
        }
        if t == 0 {
            return Err(Error::usage("empty sequence (T = 0)"));
        }
        Ok(t)
    }

    pub fn forward(&self, views: &[Tensor<T>]) -> Result<ClassifyCache<T>> {
        self.check_sample(views)?;
        let mut stem_caches = Vec::with_capacity(views.len());
        let mut stem_outs = Vec::with_capacity(views.len());
        for (stem, v) in self.stems.iter().zip(views.iter()) {
            let (out, cache) = stem.forward(v)?;
            stem_caches.push(cache);
            stem_outs.push(out);
        }

        let (fused, fusion) = if self.config.views == 1 {
            (stem_outs[0].clone(), FusionCache::Single)
        } else if self.config.use_xva {
            let mut pieces = Vec::new();
            let mut caches = Vec::new();
            for i in 0..stem_outs.len() {
                for j in i + 1..stem_outs.len() {
                    let (y, cache) = xva_forward(&stem_outs[i], &stem_outs[j])?;
                    pieces.push(y);
                    caches.push(((i, j), cache));
                }
            }
            (concat_channels(&pieces), FusionCache::Xva(caches))
        } else {
            (concat_channels(&stem_outs), FusionCache::Concat)
        };

        let (post_pre, post_conv_cache) = self.post_conv.forward(&fused)?;
        let mut a = relu(&post_pre);
        let post_se_cache = match &self.post_se {
            Some(se) => {
                let (out, cache) = se.forward(&a)?;
                a = out;
                Some(cache)
            }
            None => None,
        };
        let pooled_in_shape = a.shape().to_vec();
        let pooled = gap1d(&a)?;
        let logits = self.head.forward(&pooled)?;
        let probs = softmax_axis(&logits, 0);
        Ok(ClassifyCache {
            stems: stem_caches,
            stem_outs,
            fusion,
            post_conv: post_conv_cache,
            post_pre,
            post_se: post_se_cache,
            pooled_in_shape,
            pooled,
            logits,
            probs,
        })
    }

    /// Softmax probabilities and raw logits for one sample.
    pub fn classify(&self, views: &[Tensor<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
        let cache = self.forward(views)?;
        Ok((cache.probs, cache.logits))
    }

    /// Backprop from d(logits); accumulates every parameter gradient and
    /// returns the gradient wrt each view's input features.
    pub fn backward(&mut self, cache: &ClassifyCache<T>, dlogits: &Tensor<T>) -> Vec<Tensor<T>> {
        let dpooled = self.head.backward(&cache.pooled, dlogits);
        let mut da = gap1d_backward(&dpooled, &cache.pooled_in_shape);
        if let (Some(se), Some(se_cache)) = (&mut self.post_se, &cache.post_se) {
            da = se.backward(se_cache, &da);
        }
        let dpost_pre = relu_backward(&cache.post_pre, &da);
        let dfused = self.post_conv.backward(&cache.post_conv, &dpost_pre);

        let t = cache.stem_outs[0].shape()[0];
        let mut dstem_outs: Vec<Tensor<T>> = cache
            .stem_outs
            .iter()
            .map(|o| Tensor::zeros(o.shape()))
            .collect();
        match &cache.fusion {
            FusionCache::Single => {
                dstem_outs[0] = dfused;
            }
            FusionCache::Concat => {
                let widths: Vec<usize> = cache.stem_outs.iter().map(|o| o.shape()[1]).collect();
                split_channels(&dfused, &widths, t, &mut dstem_outs);
            }
            FusionCache::Xva(pairs) => {
                let widths: Vec<usize> = pairs.iter().map(|_| 2 * STEM_WIDTH).collect();
                let mut per_pair: Vec<Tensor<T>> =
                    widths.iter().map(|&w| Tensor::zeros(&[t, w])).collect();
                split_channels(&dfused, &widths, t, &mut per_pair);
                for (((i, j), cache), dy) in pairs.iter().zip(per_pair.iter()) {
                    let (dv1, dv2) = xva_backward(cache, dy);
                    dstem_outs[*i].add_assign(&dv1);
                    dstem_outs[*j].add_assign(&dv2);
                }
            }
        }

        let mut dinputs = Vec::with_capacity(self.stems.len());
        for ((stem, stem_cache), d) in self
            .stems
            .iter_mut()
            .zip(cache.stems.iter())
            .zip(dstem_outs.iter())
        {
            dinputs.push(stem.backward(stem_cache, d));
        }
        dinputs
    }

    /// Feature map of the final conv block (post-ReLU, pre-SE) plus the
    /// gradient of the chosen class logit wrt it, and the sample's
    /// probabilities/logits. Read-only: the partial backward runs on a clone.
    pub fn last_conv_activations_and_grad(
        &self,
        views: &[Tensor<T>],
        class_index: usize,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
        if class_index >= NUM_CLASSES {
            return Err(Error::usage(format!(
                "class index {} out of range (0..{})",
                class_index, NUM_CLASSES
            )));
        }
        let cache = self.forward(views)?;
        let activations = relu(&cache.post_pre);

        let mut scratch = self.clone();
        let mut dlogits = Tensor::zeros(&[NUM_CLASSES]);
        dlogits.data_mut()[class_index] = T::one();
        let dpooled = scratch.head.backward(&cache.pooled, &dlogits);
        let mut da = gap1d_backward(&dpooled, &cache.pooled_in_shape);
        if let (Some(se), Some(se_cache)) = (&mut scratch.post_se, &cache.post_se) {
            da = se.backward(se_cache, &da);
        }
        // da is dY^c wrt the block's (post-ReLU) feature map itself; the
        // ReLU only enters gradients further upstream.
        Ok((activations, da, cache.probs, cache.logits))
    }

    /// Gradient of the chosen class logit wrt each view's input feature
    /// rows. Read-only: the full backward runs on a clone.
    pub fn input_feature_gradient(
        &self,
        views: &[Tensor<T>],
        class_index: usize,
    ) -> Result<Vec<Tensor<T>>> {
        if class_index >= NUM_CLASSES {
            return Err(Error::usage(format!(
                "class index {} out of range (0..{})",
                class_index, NUM_CLASSES
            )));
        }
        let mut scratch = self.clone();
        let cache = scratch.forward(views)?;
        let mut dlogits = Tensor::zeros(&[NUM_CLASSES]);
        dlogits.data_mut()[class_index] = T::one();
        Ok(scratch.backward(&cache, &dlogits))
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut params = Vec::new();
        for stem in &mut self.stems {
            params.push(&mut stem.conv1.weight);
            params.push(&mut stem.conv1.bias);
            if let Some(se) = &mut stem.se1 {
                params.push(&mut se.w1);
                params.push(&mut se.w2);
            }
            params.push(&mut stem.conv2.weight);
            params.push(&mut stem.conv2.bias);
            if let Some(se) = &mut stem.se2 {
                params.push(&mut se.w1);
                params.push(&mut se.w2);
            }
        }
        params.push(&mut self.post_conv.weight);
        params.push(&mut self.post_conv.bias);
        if let Some(se) = &mut self.post_se {
            params.push(&mut se.w1);
            params.push(&mut se.w2);
        }
        params.push(&mut self.head.weight);
        params.push(&mut self.head.bias);
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

fn concat_channels<T: Scalar>(pieces: &[Tensor<T>]) -> Tensor<T> {
    let t = pieces[0].shape()[0];
    let total: usize = pieces.iter().map(|p| p.shape()[1]).sum();
    let mut out = vec![T::zero(); t * total];
    for row in 0..t {
        let mut offset = 0;
        for p in pieces {
            let w = p.shape()[1];
            out[row * total + offset..row * total + offset + w]
                .copy_from_slice(&p.data()[row * w..(row + 1) * w]);
            offset += w;
        }
    }
    Tensor::from_vec(&[t, total], out).expect("concat shape")
}

fn split_channels<T: Scalar>(fused: &Tensor<T>, widths: &[usize], t: usize, out: &mut [Tensor<T>]) {
    let total = fused.shape()[1];
    for row in 0..t {
        let mut offset = 0;
        for (piece, &w) in out.iter_mut().zip(widths.iter()) {
            piece.data_mut()[row * w..(row + 1) * w]
                .copy_from_slice(&fused.data()[row * total + offset..row * total + offset + w]);
            offset += w;
        }
    }
}

/// Paper-form cross entropy over m = 2 classes: -(1/m) * sum y_i log(p_i),
/// with one-hot ground truth and a 1e-12 clamp under the log.
pub fn loss_xent<T: Scalar>(probs: &Tensor<T>, label: Label) -> T {
    let p = probs.data()[label.index()].max(T::from_f64(1e-12));
    -p.ln() / T::from_f64(NUM_CLASSES as f64)
}

/// d loss_xent / d logits = (p - one_hot) / m, exact for softmax + xent.
pub fn loss_xent_grad_logits<T: Scalar>(probs: &Tensor<T>, label: Label) -> Tensor<T> {
    let m = T::from_f64(NUM_CLASSES as f64);
    let mut g = probs.clone();
    g.data_mut()[label.index()] -= T::one();
    g.scale(T::one() / m);
    g
}

/// Replace one attention mechanism by its identity path. Parameters whose
/// shapes survive the change are copied over; the rest (the post conv when
/// the fusion width changes) are re-initialised from the model seed.
pub fn ablate<T: Scalar>(
    model: &ClassifierModel<T>,
    which: Mechanism,
) -> Result<ClassifierModel<T>> {
    let mut config = model.config;
    match which {
        Mechanism::Xva => config.use_xva = false,
        Mechanism::Se => config.use_se = false,
    }
    let mut fresh = ClassifierModel::new(config)?;
    let mut old = model.clone();
    copy_matching(&mut fresh, old.parameters_mut());
    Ok(fresh)
}

fn copy_matching<T: Scalar>(fresh: &mut ClassifierModel<T>, old: Vec<&mut Parameter<T>>) {
    // Pair parameters up in canonical order; a param carries over only when
    // its shape survived, and old params the new schema dropped (SE weights
    // after an SE ablation) are skipped.
    let mut old_iter = old.into_iter().peekable();
    for p in fresh.parameters_mut() {
        while let Some(candidate) = old_iter.peek() {
            if candidate.value.shape() == p.value.shape() {
                p.value = old_iter.next().unwrap().value.clone();
                break;
            }
            old_iter.next();
        }
    }
}
