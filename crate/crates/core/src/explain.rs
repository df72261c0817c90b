//! GradCAM feedback. Temporal saliency weighs the last temporal conv block's
//! activations by the time-averaged gradient of the class logit; spatial
//! saliency chains the classifier's sensitivity to one feature row through
//! the encoder onto its deepest conv activations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::autoencoder::AeModel;
use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::numerics::{gap2d_backward, Scalar, Tensor};

/// Per-timestep class saliency, both as the raw weighted sum and with the
/// conventional ReLU rectification, at the conv resolution T' and linearly
/// upsampled back to the input length T.
#[derive(Debug, Clone)]
pub struct TemporalSaliency {
    pub class_index: usize,
    pub raw: Vec<f64>,
    pub rectified: Vec<f64>,
    pub raw_upsampled: Vec<f64>,
    pub rectified_upsampled: Vec<f64>,
}

/// L_i = sum_k w_k A[i, k]: combine a [T', K] activation map with per-channel
/// weights.
pub fn weighted_channel_sum<T: Scalar>(activations: &Tensor<T>, weights: &[f64]) -> Vec<f64> {
    let t = activations.shape()[0];
    let k = activations.shape()[1];
    debug_assert_eq!(weights.len(), k);
    let mut out = vec![0.0; t];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &activations.data()[i * k..(i + 1) * k];
        *o = row
            .iter()
            .zip(weights.iter())
            .map(|(&a, &w)| a.to_f64() * w)
            .sum();
    }
    out
}

/// Linear interpolation from `values.len()` points to `target` points, with
/// the endpoints pinned. Identity when the lengths already match.
pub fn upsample_linear(values: &[f64], target: usize) -> Vec<f64> {
    assert!(!values.is_empty() && target > 0);
    if values.len() == 1 {
        return vec![values[0]; target];
    }
    if target == 1 {
        return vec![values[0]];
    }
    let scale = (values.len() - 1) as f64 / (target - 1) as f64;
    (0..target)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(values.len() - 1);
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[hi] * frac
        })
        .collect()
}

/// Temporal GradCAM over the classifier's last conv block: channel weights
/// are the sequence-averaged gradients of the pre-softmax class logit, and
/// the saliency is their weighted activation sum per timestep.
pub fn temporal_gradcam<T: Scalar>(
    model: &ClassifierModel<T>,
    views: &[Tensor<T>],
    class_index: usize,
) -> Result<TemporalSaliency> {
    let (activations, grad, _, _) = model.last_conv_activations_and_grad(views, class_index)?;
    let t_conv = activations.shape()[0];
    let k = activations.shape()[1];
    let t_input = views[0].shape()[0];

    // w_k = (1/n) sum_i dY/dA[i, k]
    let mut weights = vec![0.0; k];
    for i in 0..t_conv {
        for (ch, w) in weights.iter_mut().enumerate() {
            *w += grad.data()[i * k + ch].to_f64();
        }
    }
    for w in &mut weights {
        *w /= t_conv as f64;
    }

    let raw = weighted_channel_sum(&activations, &weights);
    let rectified: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let raw_upsampled = upsample_linear(&raw, t_input);
    let rectified_upsampled = upsample_linear(&rectified, t_input);
    Ok(TemporalSaliency {
        class_index,
        raw,
        rectified,
        raw_upsampled,
        rectified_upsampled,
    })
}

/// 2D class saliency for one frame, upsampled to the frame resolution.
#[derive(Debug, Clone)]
pub struct SpatialSaliency {
    pub class_index: usize,
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Spatial GradCAM: the classifier's logit gradient wrt the chosen frame's
/// feature row is chained through the bottleneck and pooling onto the
/// deepest encoder conv activations; their rectified weighted sum, blown up
/// to input resolution, is the map.
pub fn spatial_gradcam<T: Scalar>(
    ae: &AeModel<T>,
    clf: &ClassifierModel<T>,
    views: &[Tensor<T>],
    view_index: usize,
    frame: &Tensor<T>,
    frame_index: usize,
    class_index: usize,
) -> Result<SpatialSaliency> {
    if view_index >= views.len() {
        return Err(Error::usage(format!(
            "view index {} out of range ({} views)",
            view_index,
            views.len()
        )));
    }
    let t_len = views[view_index].shape()[0];
    if frame_index >= t_len {
        return Err(Error::usage(format!(
            "frame index {} out of range (T = {})",
            frame_index, t_len
        )));
    }

    // dY^c / d(feature row) for the chosen view and frame.
    let dfeatures = clf.input_feature_gradient(views, class_index)?;
    let n_z = ae.n_z;
    let row = &dfeatures[view_index].data()[frame_index * n_z..(frame_index + 1) * n_z];
    let dcode = Tensor::from_vec(&[n_z], row.to_vec())?;

    // Chain through bottleneck linear and GAP onto the conv activations.
    let (_, last_act) = ae.encode_with_last_activation(frame)?;
    let dgap = ae.bottleneck.backward_input(&dcode);
    let dact = gap2d_backward(&dgap, last_act.shape());

    // GradCAM weights: spatial mean of the gradient per channel.
    let (c, h, w) = (last_act.shape()[0], last_act.shape()[1], last_act.shape()[2]);
    let hw = h * w;
    let mut weights = vec![0.0; c];
    for (ch, wv) in weights.iter_mut().enumerate() {
        let mut s = 0.0;
        for &g in &dact.data()[ch * hw..(ch + 1) * hw] {
            s += g.to_f64();
        }
        *wv = s / hw as f64;
    }
    let mut small = vec![0.0; hw];
    for ch in 0..c {
        let plane = &last_act.data()[ch * hw..(ch + 1) * hw];
        for (o, &a) in small.iter_mut().zip(plane.iter()) {
            *o += weights[ch] * a.to_f64();
        }
    }
    for v in &mut small {
        *v = v.max(0.0);
    }

    let target = ae.input_size;
    let values = upsample_plane(&small, h, w, target, target);
    Ok(SpatialSaliency {
        class_index,
        frame_index,
        height: target,
        width: target,
        values,
    })
}

/// Nearest-neighbour doubling followed by bilinear resampling to the target.
fn upsample_plane(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    // Nearest x2 smooths out the degenerate 1- or 2-pixel planes first.
    let (nh, nw) = (h * 2, w * 2);
    let mut mid = vec![0.0; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            mid[y * nw + x] = src[(y / 2) * w + x / 2];
        }
    }
    let mut out = vec![0.0; th * tw];
    let sy = nh as f64 / th as f64;
    let sx = nw as f64 / tw as f64;
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (nh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(nh - 1);
        let wy = fy - y0 as f64;
        for x in 0..tw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (nw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(nw - 1);
            let wx = fx - x0 as f64;
            let top = mid[y0 * nw + x0] * (1.0 - wx) + mid[y0 * nw + x1] * wx;
            let bottom = mid[y1 * nw + x0] * (1.0 - wx) + mid[y1 * nw + x1] * wx;
            out[y * tw + x] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// CSV export: one "index,value" row per entry.
pub fn export_saliency_csv(values: &[f64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i, v);
    }
    crate::pipeline::formats::write_atomic(path, out.as_bytes())
}

pub fn read_saliency_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let (_, v) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path, format!("line {}: expected index,value", lineno + 1)))?;
        values.push(
            v.parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad value '{v}'", lineno + 1)))?,
        );
    }
    Ok(values)
}

/// 8-bit binary PGM (P5), min-max normalised; a constant map exports as
/// mid-gray 128.
pub fn export_saliency_pgm(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape(format!(
            "{} values do not fill {}x{}",
            values.len(),
            width,
            height
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(values.len() + 32);
    write!(out, "P5\n{} {}\n255\n", width, height).expect("in-memory write");
    if hi > lo {
        for &v in values {
            out.push(((v - lo) / (hi - lo) * 255.0).round() as u8);
        }
    } else {
        out.resize(out.len() + values.len(), 128);
    }
    crate::pipeline::formats::write_atomic(path, &out)
}

/// `{trial_id}.{view}.{class}.saliency.{ext}`
pub fn saliency_file_name(trial_id: &str, view: &str, class_index: usize, ext: &str) -> String {
    format!("{trial_id}.{view}.c{class_index}.saliency.{ext}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassifierConfig, ClassifierModel};
    use crate::numerics::Rng;

    fn rand_seq(rng: &mut Rng, t: usize, c: usize) -> Tensor<f64> {
        Tensor::from_vec(&[t, c], (0..t * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn single_channel_identity_weights() {
        // K = 1, A = [1, 2, 3]^T, gradient 1 everywhere: w = 1, L = [1, 2, 3].
        let a = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let l = weighted_channel_sum(&a, &[1.0]);
        assert_eq!(l, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_gradient_zero_map() {
        let a = Tensor::from_vec(&[4, 2], vec![1.0; 8]).unwrap();
        let l = weighted_channel_sum(&a, &[0.0, 0.0]);
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_is_linear_in_activations() {
        // Fixed weights: scaling A scales raw L by the same factor.
        let mut rng = Rng::new(1);
        let a = rand_seq(&mut rng, 6, 5);
        let w: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let base = weighted_channel_sum(&a, &w);
        let scaled = weighted_channel_sum(&a.map(|v| v * 3.5), &w);
        for (b, s) in base.iter().zip(scaled.iter()) {
            assert!((s - 3.5 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn gradcam_weights_match_finite_differences() {
        // Tiny model: extract A and dY/dA, then check the analytic gradient
        // against finite differences of the head-side forward in A.
        let config = ClassifierConfig {
            n_z: 4,
            views: 1,
            use_xva: false,
            use_se: true,
            seed: 2,
        };
        let model = ClassifierModel::<f64>::new(config).unwrap();
        let mut rng = Rng::new(3);
        let views = vec![rand_seq(&mut rng, 5, 4)];
        let class_index = 1;
        let (a, grad, _, _) = model
            .last_conv_activations_and_grad(&views, class_index)
            .unwrap();

        // Forward from A to the logit: SE -> gap -> head.
        let logit_from_a = |a: &Tensor<f64>| -> f64 {
            let mut x = a.clone();
            if let Some(se) = &model.post_se {
                x = se.forward(&x).unwrap().0;
            }
            let pooled = crate::numerics::gap1d(&x).unwrap();
            model.head.forward(&pooled).unwrap().data()[class_index]
        };
        let fd = crate::numerics::gradcheck::central_diff(logit_from_a, &a, 1e-5);
        for i in 0..a.len() {
            let rel = (grad.data()[i] - fd.data()[i]).abs()
                / grad.data()[i].abs().max(fd.data()[i].abs()).max(1e-3);
            assert!(rel < 1e-6, "site {i}: {} vs {}", grad.data()[i], fd.data()[i]);
        }

        let sal = temporal_gradcam(&model, &views, class_index).unwrap();
        assert_eq!(sal.raw.len(), 5);
        assert_eq!(sal.rectified_upsampled.len(), 5);
        assert!(sal.rectified.iter().all(|&v| v >= 0.0));
        for (r, rect) in sal.raw.iter().zip(sal.rectified.iter()) {
            if *r > 0.0 {
                assert_eq!(r, rect);
            }
        }
        assert!(temporal_gradcam(&model, &views, 2).is_err());
    }

    #[test]
    fn upsample_endpoints_and_identity() {
        let v = vec![0.0, 1.0, 2.0];
        assert_eq!(upsample_linear(&v, 3), v);
        let up = upsample_linear(&v, 5);
        assert_eq!(up.len(), 5);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[4], 2.0);
        assert!((up[1] - 0.5).abs() < 1e-12);
        assert_eq!(upsample_linear(&[4.0], 3), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn csv_export_examples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        export_saliency_csv(&[0.0, 1.0, 2.0], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "0,0\n1,1\n2,2\n");
        // Round trip within 1e-6 (exact here).
        let back = read_saliency_csv(&path).unwrap();
        assert_eq!(back, vec![0.0, 1.0, 2.0]);

        let precise = [0.123456789, -2.5e-7, 3.0];
        export_saliency_csv(&precise, &path).unwrap();
        let back = read_saliency_csv(&path).unwrap();
        for (a, b) in precise.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pgm_export_normalisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        export_saliency_pgm(&[0.0, 0.5, 1.0], 3, 1, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        let pix = &bytes[bytes.len() - 3..];
        assert_eq!(pix, &[0, 128, 255]);

        // Constant map: defined as mid-gray.
        export_saliency_pgm(&[7.0; 4], 2, 2, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[128, 128, 128, 128]);
    }
}
