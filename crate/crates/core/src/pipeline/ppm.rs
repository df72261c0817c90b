//! Binary PPM (P6, 8-bit) frame ingestion: parse, bilinear resize, and the
//! [-1, 1] pixel scaling the models expect. Writing is supported so the
//! synthetic generator can emit frame directories in the same format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Raw 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>, // 3 * width * height
}

fn parse_err(path: &Path, what: &str) -> Error {
    Error::format(path, format!("invalid PPM: {what}"))
}

/// Parse a binary P6 PPM with 8-bit samples. Comments (#) are allowed in the
/// header; maxval must be 255; a short payload is rejected.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|what| parse_err(path, &what))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> std::result::Result<Vec<u8>, String> {
        // Skip whitespace and comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(bytes[start..pos].to_vec())
    };

    let magic = token(bytes)?;
    if magic != b"P6" {
        return Err(format!(
            "magic {:?}, expected P6",
            String::from_utf8_lossy(&magic)
        ));
    }
    let width: usize = String::from_utf8_lossy(&token(bytes)?)
        .parse()
        .map_err(|_| "bad width".to_string())?;
    let height: usize = String::from_utf8_lossy(&token(bytes)?)
        .parse()
        .map_err(|_| "bad height".to_string())?;
    let maxval: usize = String::from_utf8_lossy(&token(bytes)?)
        .parse()
        .map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing header terminator".into());
    }
    pos += 1;
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(format!(
            "payload truncated: want {} bytes, have {}",
            need,
            bytes.len() - pos
        ));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = Vec::with_capacity(img.pixels.len() + 32);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("in-memory write");
    out.extend_from_slice(&img.pixels);
    crate::pipeline::formats::write_atomic(path, &out)
}

/// Bilinear resample of one channel plane expressed through a sampler.
fn bilinear_sample(get: &dyn Fn(usize, usize) -> f64, w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = get(x0, y0) * (1.0 - fx) + get(x1, y0) * fx;
    let bottom = get(x0, y1) * (1.0 - fx) + get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Decode, bilinear-resize to `target` x `target`, and scale pixels from
/// [0, 255] to [-1, 1]. Channel order stays RGB, output layout [3, H, W].
pub fn preprocess_frame<T: Scalar>(img: &RgbImage, target: usize) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    let scale_x = w as f64 / target as f64;
    let scale_y = h as f64 / target as f64;
    let mut data = vec![T::zero(); 3 * target * target];
    for c in 0..3 {
        let get = |x: usize, y: usize| img.pixels[(y * w + x) * 3 + c] as f64;
        for oy in 0..target {
            // Pixel-centre mapping: identity when the sizes already match.
            let sy = (oy as f64 + 0.5) * scale_y - 0.5;
            for ox in 0..target {
                let sx = (ox as f64 + 0.5) * scale_x - 0.5;
                let v = bilinear_sample(&get, w, h, sx, sy);
                data[(c * target + oy) * target + ox] = T::from_f64(v / 255.0 * 2.0 - 1.0);
            }
        }
    }
    Tensor::from_vec(&[3, target, target], data).expect("preprocess shape")
}

/// Read and preprocess every `.ppm` frame in a directory, sorted by file
/// name, optionally keeping only every `stride`-th frame.
pub fn ingest_frame_dir<T: Scalar>(
    dir: &Path,
    target: usize,
    stride: usize,
) -> Result<Vec<Tensor<T>>> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "ppm").unwrap_or(false))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::usage(format!("no .ppm frames in {}", dir.display())));
    }
    let stride = stride.max(1);
    names
        .iter()
        .step_by(stride)
        .map(|p| Ok(preprocess_frame(&read_ppm(p)?, target)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> RgbImage {
        let mut pixels = vec![0u8; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 200 } else { 30 };
                for c in 0..3 {
                    pixels[(y * w + x) * 3 + c] = v;
                }
            }
        }
        RgbImage {
            width: w,
            height: h,
            pixels,
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = checker(6, 4);
        let mut bytes = Vec::new();
        write!(bytes, "P6\n{} {}\n255\n", img.width, img.height).unwrap();
        bytes.extend_from_slice(&img.pixels);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = checker(2, 2);
        let mut bytes = Vec::new();
        write!(bytes, "P6\n# made by a camera\n2 2\n# maxval next\n255\n").unwrap();
        bytes.extend_from_slice(&img.pixels);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_ppm(b"P5\n2 2\n255\n....").is_err()); // wrong magic
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err()); // 16-bit
        assert!(decode_ppm(b"P6\n2 2\n255\nxx").is_err()); // truncated payload
        assert!(decode_ppm(b"P6\n2").is_err()); // truncated header
    }

    #[test]
    fn resize_shapes_and_range() {
        // 640x480 -> 256 with [-1, 1] scaling.
        let img = checker(640, 480);
        let t = preprocess_frame::<f32>(&img, 256);
        assert_eq!(t.shape(), &[3, 256, 256]);
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn all_black_maps_to_minus_one() {
        let img = RgbImage {
            width: 4,
            height: 4,
            pixels: vec![0; 48],
        };
        let t = preprocess_frame::<f64>(&img, 4);
        assert!(t.data().iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_resize_preserves_values() {
        let img = checker(8, 8);
        let t = preprocess_frame::<f64>(&img, 8);
        for y in 0..8 {
            for x in 0..8 {
                let want = img.pixels[(y * 8 + x) * 3] as f64 / 255.0 * 2.0 - 1.0;
                let got = t.data()[y * 8 + x];
                assert!((got - want).abs() < 1e-6);
            }
        }
    }
}
