//! Binary file formats: "XVAF" feature files and "XVAM" model checkpoints.
//! Both are little-endian, versioned, and carry a trailing CRC32 over every
//! preceding byte. Writers are canonical, so load-then-save is byte
//! identical; loaders verify magic, version and CRC before touching payload.

use std::fs;
use std::path::Path;

use crate::autoencoder::{AeModel, PerceptualExtractor, Provenance};
use crate::classifier::{ClassifierConfig, ClassifierModel, SeBlock, ViewFeatureSequence, ViewId};
use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Conv2d, Parameter, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"XVAF";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XVAM";
pub const FORMAT_VERSION: u32 = 1;

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        let mut w = Writer { buf };
        w.u32(FORMAT_VERSION);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vals: &[f32]) {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and the trailing CRC; hands back a cursor over
    /// the payload between them.
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 {
            return Err("file too short".into());
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err("CRC mismatch".into());
        }
        if &body[..4] != magic {
            return Err(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&body[..4])
            ));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        Ok(Reader {
            bytes: body,
            pos: 8,
        })
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("unexpected end of file".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

pub fn encode_feature_file(views: &[ViewFeatureSequence<f32>]) -> Result<Vec<u8>> {
    if views.is_empty() || views.len() > u8::MAX as usize {
        return Err(Error::usage(format!("{} views in feature file", views.len())));
    }
    let mut w = Writer::new(FEATURE_MAGIC);
    w.u8(views.len() as u8);
    for v in views {
        let shape = v.features.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!(
                "feature sequence must be [T, n_z], got {:?}",
                shape
            )));
        }
        w.u8(v.view_id.code());
        w.u32(shape[0] as u32);
        w.u32(shape[1] as u32);
        w.f32s(v.features.data());
    }
    Ok(w.finish())
}

pub fn decode_feature_file(bytes: &[u8]) -> std::result::Result<Vec<ViewFeatureSequence<f32>>, String> {
    let mut r = Reader::open(bytes, FEATURE_MAGIC)?;
    let count = r.u8()? as usize;
    let mut views = Vec::with_capacity(count);
    for _ in 0..count {
        let code = r.u8()?;
        let view_id = ViewId::from_code(code).ok_or(format!("unknown view id {code}"))?;
        let t = r.u32()? as usize;
        let n_z = r.u32()? as usize;
        if t == 0 || n_z == 0 {
            return Err("zero-sized feature sequence".into());
        }
        let data = r.f32s(t * n_z)?;
        let features = Tensor::from_vec(&[t, n_z], data).map_err(|e| e.to_string())?;
        views.push(ViewFeatureSequence { view_id, features });
    }
    r.done()?;
    Ok(views)
}

pub fn save_feature_file(path: &Path, views: &[ViewFeatureSequence<f32>]) -> Result<()> {
    write_atomic(path, &encode_feature_file(views)?)
}

pub fn load_feature_file(path: &Path) -> Result<Vec<ViewFeatureSequence<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes).map_err(|reason| Error::format(path, reason))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const KIND_AE: u8 = 0;
const KIND_PERCEPTUAL: u8 = 1;
const KIND_CLASSIFIER: u8 = 2;

const LAYER_CONV2D: u8 = 0;
const LAYER_CONVTRANSPOSE2D: u8 = 1;
const LAYER_CONV1D: u8 = 2;
const LAYER_LINEAR: u8 = 3;
const LAYER_SE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Ae,
    Perceptual,
    Classifier,
}

fn write_config(
    w: &mut Writer,
    kind: u8,
    n_z: usize,
    input_size: usize,
    use_xva: bool,
    use_se: bool,
    views: usize,
    seed: u64,
) {
    w.u8(kind);
    w.u32(n_z as u32);
    w.u32(input_size as u32);
    let mut flags = 0u8;
    if use_xva {
        flags |= 1;
    }
    if use_se {
        flags |= 2;
    }
    w.u8(flags);
    w.u8(views as u8);
    w.u64(seed);
}

struct ConfigEcho {
    kind: u8,
    n_z: usize,
    input_size: usize,
    use_xva: bool,
    use_se: bool,
    views: usize,
    seed: u64,
}

fn read_config(r: &mut Reader) -> std::result::Result<ConfigEcho, String> {
    let kind = r.u8()?;
    let n_z = r.u32()? as usize;
    let input_size = r.u32()? as usize;
    let flags = r.u8()?;
    let views = r.u8()? as usize;
    let seed = r.u64()?;
    Ok(ConfigEcho {
        kind,
        n_z,
        input_size,
        use_xva: flags & 1 != 0,
        use_se: flags & 2 != 0,
        views,
        seed,
    })
}

fn write_layer(w: &mut Writer, kind: u8, geom: &[u32], blobs: &[&[f32]]) {
    w.u8(kind);
    w.u8(geom.len() as u8);
    for &g in geom {
        w.u32(g);
    }
    let total: usize = blobs.iter().map(|b| b.len()).sum();
    w.u64(total as u64);
    for b in blobs {
        w.f32s(b);
    }
}

struct LayerRecord {
    kind: u8,
    geom: Vec<u32>,
    params: Vec<f32>,
}

fn read_layer(r: &mut Reader) -> std::result::Result<LayerRecord, String> {
    let kind = r.u8()?;
    let geom_len = r.u8()? as usize;
    let mut geom = Vec::with_capacity(geom_len);
    for _ in 0..geom_len {
        geom.push(r.u32()?);
    }
    let count = r.u64()? as usize;
    let params = r.f32s(count)?;
    Ok(LayerRecord { kind, geom, params })
}

fn conv2d_record(c: &Conv2d<f32>) -> (u8, Vec<u32>, Vec<&[f32]>) {
    (
        LAYER_CONV2D,
        vec![
            c.in_channels as u32,
            c.out_channels as u32,
            c.kernel as u32,
            c.padding as u32,
            c.stride as u32,
        ],
        vec![c.weight.value.data(), c.bias.value.data()],
    )
}

fn set_param(p: &mut Parameter<f32>, data: &[f32]) -> std::result::Result<(), String> {
    if p.value.len() != data.len() {
        return Err(format!(
            "parameter blob length {} does not match geometry {}",
            data.len(),
            p.value.len()
        ));
    }
    p.value.data_mut().copy_from_slice(data);
    Ok(())
}

/// Split one layer record's blob into (weight, bias)-style pieces by the
/// target parameter sizes.
fn fill_params(
    record: &LayerRecord,
    targets: &mut [&mut Parameter<f32>],
) -> std::result::Result<(), String> {
    let want: usize = targets.iter().map(|p| p.value.len()).sum();
    if record.params.len() != want {
        return Err(format!(
            "layer blob has {} values, geometry wants {}",
            record.params.len(),
            want
        ));
    }
    let mut offset = 0;
    for p in targets {
        let n = p.value.len();
        set_param(p, &record.params[offset..offset + n])?;
        offset += n;
    }
    Ok(())
}

fn check_geom(record: &LayerRecord, kind: u8, geom: &[u32]) -> std::result::Result<(), String> {
    if record.kind != kind {
        return Err(format!(
            "layer kind {} where {} was expected",
            record.kind, kind
        ));
    }
    if record.geom != geom {
        return Err(format!(
            "layer geometry {:?} does not match the declared config {:?}",
            record.geom, geom
        ));
    }
    Ok(())
}

pub fn encode_ae_checkpoint(model: &AeModel<f32>) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    write_config(
        &mut w,
        KIND_AE,
        model.n_z,
        model.input_size,
        false,
        false,
        0,
        model.seed,
    );
    let layer_count = model.enc_convs.len() + 2 + model.dec_convs.len();
    w.u32(layer_count as u32);
    for c in &model.enc_convs {
        let (kind, geom, blobs) = conv2d_record(c);
        write_layer(&mut w, kind, &geom, &blobs);
    }
    write_layer(
        &mut w,
        LAYER_LINEAR,
        &[model.bottleneck.in_dim as u32, model.bottleneck.out_dim as u32],
        &[
            model.bottleneck.weight.value.data(),
            model.bottleneck.bias.value.data(),
        ],
    );
    write_layer(
        &mut w,
        LAYER_LINEAR,
        &[model.dec_linear.in_dim as u32, model.dec_linear.out_dim as u32],
        &[
            model.dec_linear.weight.value.data(),
            model.dec_linear.bias.value.data(),
        ],
    );
    for c in &model.dec_convs {
        write_layer(
            &mut w,
            LAYER_CONVTRANSPOSE2D,
            &[
                c.in_channels as u32,
                c.out_channels as u32,
                c.kernel as u32,
                c.padding as u32,
                c.stride as u32,
                c.output_padding as u32,
            ],
            &[c.weight.value.data(), c.bias.value.data()],
        );
    }
    w.finish()
}

pub fn decode_ae_checkpoint(bytes: &[u8]) -> std::result::Result<AeModel<f32>, String> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let config = read_config(&mut r)?;
    if config.kind != KIND_AE {
        return Err(format!("checkpoint kind {} is not an autoencoder", config.kind));
    }
    let mut model =
        AeModel::<f32>::new(config.n_z, config.input_size, config.seed).map_err(|e| e.to_string())?;
    let layer_count = r.u32()? as usize;
    if layer_count != model.enc_convs.len() + 2 + model.dec_convs.len() {
        return Err(format!("unexpected layer count {layer_count}"));
    }
    for c in &mut model.enc_convs {
        let record = read_layer(&mut r)?;
        let (kind, geom, _) = conv2d_record(c);
        check_geom(&record, kind, &geom)?;
        fill_params(&record, &mut [&mut c.weight, &mut c.bias])?;
    }
    for lin in [&mut model.bottleneck, &mut model.dec_linear] {
        let record = read_layer(&mut r)?;
        check_geom(
            &record,
            LAYER_LINEAR,
            &[lin.in_dim as u32, lin.out_dim as u32],
        )?;
        fill_params(&record, &mut [&mut lin.weight, &mut lin.bias])?;
    }
    for c in &mut model.dec_convs {
        let record = read_layer(&mut r)?;
        check_geom(
            &record,
            LAYER_CONVTRANSPOSE2D,
            &[
                c.in_channels as u32,
                c.out_channels as u32,
                c.kernel as u32,
                c.padding as u32,
                c.stride as u32,
                c.output_padding as u32,
            ],
        )?;
        fill_params(&record, &mut [&mut c.weight, &mut c.bias])?;
    }
    r.done()?;
    Ok(model)
}

pub fn encode_perceptual_checkpoint(phi: &PerceptualExtractor<f32>) -> Vec<u8> {
    let seed = match phi.provenance {
        Provenance::RandomSeeded(s) => s,
        Provenance::LoadedFromFile(_) => 0,
    };
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    write_config(&mut w, KIND_PERCEPTUAL, 0, 0, false, false, 0, seed);
    w.u32(phi.convs.len() as u32);
    for c in &phi.convs {
        let (kind, geom, blobs) = conv2d_record(c);
        write_layer(&mut w, kind, &geom, &blobs);
    }
    w.finish()
}

/// Perceptual checkpoints rebuild the conv stack purely from the layer
/// records, so externally produced extractors with other channel plans load
/// fine as long as each record is a conv2d.
pub fn decode_perceptual_checkpoint(
    bytes: &[u8],
) -> std::result::Result<PerceptualExtractor<f32>, String> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let config = read_config(&mut r)?;
    if config.kind != KIND_PERCEPTUAL {
        return Err(format!(
            "checkpoint kind {} is not a perceptual extractor",
            config.kind
        ));
    }
    let layer_count = r.u32()? as usize;
    let mut convs = Vec::with_capacity(layer_count);
    let mut rng = crate::numerics::Rng::new(0);
    for _ in 0..layer_count {
        let record = read_layer(&mut r)?;
        if record.kind != LAYER_CONV2D {
            return Err(format!("perceptual layer kind {} is not conv2d", record.kind));
        }
        if record.geom.len() != 5 {
            return Err("conv2d geometry must have 5 fields".into());
        }
        let mut conv = Conv2d::<f32>::new(
            record.geom[0] as usize,
            record.geom[1] as usize,
            record.geom[2] as usize,
            record.geom[3] as usize,
            record.geom[4] as usize,
            &mut rng,
        );
        fill_params(&record, &mut [&mut conv.weight, &mut conv.bias])?;
        convs.push(conv);
    }
    r.done()?;
    Ok(PerceptualExtractor {
        convs,
        provenance: Provenance::RandomSeeded(config.seed),
    })
}

fn conv1d_geom(c: &Conv1d<f32>) -> Vec<u32> {
    vec![
        c.in_channels as u32,
        c.out_channels as u32,
        c.kernel as u32,
        c.padding as u32,
        c.stride as u32,
    ]
}

fn se_geom(se: &SeBlock<f32>) -> Vec<u32> {
    vec![se.channels as u32, se.reduction as u32]
}

pub fn encode_classifier_checkpoint(model: &ClassifierModel<f32>) -> Vec<u8> {
    let cfg = &model.config;
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    write_config(
        &mut w,
        KIND_CLASSIFIER,
        cfg.n_z,
        0,
        cfg.use_xva,
        cfg.use_se,
        cfg.views,
        cfg.seed,
    );
    let per_stem = if cfg.use_se { 4 } else { 2 };
    let post = if cfg.use_se { 3 } else { 2 };
    w.u32((cfg.views * per_stem + post) as u32);
    for stem in &model.stems {
        write_layer(
            &mut w,
            LAYER_CONV1D,
            &conv1d_geom(&stem.conv1),
            &[stem.conv1.weight.value.data(), stem.conv1.bias.value.data()],
        );
        if let Some(se) = &stem.se1 {
            write_layer(
                &mut w,
                LAYER_SE,
                &se_geom(se),
                &[se.w1.value.data(), se.w2.value.data()],
            );
        }
        write_layer(
            &mut w,
            LAYER_CONV1D,
            &conv1d_geom(&stem.conv2),
            &[stem.conv2.weight.value.data(), stem.conv2.bias.value.data()],
        );
        if let Some(se) = &stem.se2 {
            write_layer(
                &mut w,
                LAYER_SE,
                &se_geom(se),
                &[se.w1.value.data(), se.w2.value.data()],
            );
        }
    }
    write_layer(
        &mut w,
        LAYER_CONV1D,
        &conv1d_geom(&model.post_conv),
        &[
            model.post_conv.weight.value.data(),
            model.post_conv.bias.value.data(),
        ],
    );
    if let Some(se) = &model.post_se {
        write_layer(
            &mut w,
            LAYER_SE,
            &se_geom(se),
            &[se.w1.value.data(), se.w2.value.data()],
        );
    }
    write_layer(
        &mut w,
        LAYER_LINEAR,
        &[model.head.in_dim as u32, model.head.out_dim as u32],
        &[model.head.weight.value.data(), model.head.bias.value.data()],
    );
    w.finish()
}

pub fn decode_classifier_checkpoint(
    bytes: &[u8],
) -> std::result::Result<ClassifierModel<f32>, String> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let config = read_config(&mut r)?;
    if config.kind != KIND_CLASSIFIER {
        return Err(format!("checkpoint kind {} is not a classifier", config.kind));
    }
    let cfg = ClassifierConfig {
        n_z: config.n_z,
        views: config.views,
        use_xva: config.use_xva,
        use_se: config.use_se,
        seed: config.seed,
    };
    let mut model = ClassifierModel::<f32>::new(cfg).map_err(|e| e.to_string())?;
    let per_stem = if cfg.use_se { 4 } else { 2 };
    let post = if cfg.use_se { 3 } else { 2 };
    let layer_count = r.u32()? as usize;
    if layer_count != cfg.views * per_stem + post {
        return Err(format!("unexpected layer count {layer_count}"));
    }

    let mut load_conv1d = |r: &mut Reader, c: &mut Conv1d<f32>| -> std::result::Result<(), String> {
        let record = read_layer(r)?;
        check_geom(&record, LAYER_CONV1D, &conv1d_geom(c))?;
        fill_params(&record, &mut [&mut c.weight, &mut c.bias])
    };
    let load_se = |r: &mut Reader, se: &mut SeBlock<f32>| -> std::result::Result<(), String> {
        let record = read_layer(r)?;
        check_geom(&record, LAYER_SE, &se_geom(se))?;
        fill_params(&record, &mut [&mut se.w1, &mut se.w2])
    };

    for stem in &mut model.stems {
        load_conv1d(&mut r, &mut stem.conv1)?;
        if let Some(se) = &mut stem.se1 {
            load_se(&mut r, se)?;
        }
        load_conv1d(&mut r, &mut stem.conv2)?;
        if let Some(se) = &mut stem.se2 {
            load_se(&mut r, se)?;
        }
    }
    load_conv1d(&mut r, &mut model.post_conv)?;
    if let Some(se) = &mut model.post_se {
        load_se(&mut r, se)?;
    }
    let record = read_layer(&mut r)?;
    check_geom(
        &record,
        LAYER_LINEAR,
        &[model.head.in_dim as u32, model.head.out_dim as u32],
    )?;
    fill_params(&record, &mut [&mut model.head.weight, &mut model.head.bias])?;
    r.done()?;
    Ok(model)
}

fn load_checkpoint_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::CheckpointNotFound(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_ae_checkpoint(path: &Path, model: &AeModel<f32>) -> Result<()> {
    write_atomic(path, &encode_ae_checkpoint(model))
}

pub fn load_ae_checkpoint(path: &Path) -> Result<AeModel<f32>> {
    decode_ae_checkpoint(&load_checkpoint_bytes(path)?)
        .map_err(|reason| Error::format(path, reason))
}

pub fn save_perceptual_checkpoint(path: &Path, phi: &PerceptualExtractor<f32>) -> Result<()> {
    write_atomic(path, &encode_perceptual_checkpoint(phi))
}

pub fn load_perceptual_checkpoint(path: &Path) -> Result<PerceptualExtractor<f32>> {
    let mut phi = decode_perceptual_checkpoint(&load_checkpoint_bytes(path)?)
        .map_err(|reason| Error::format(path, reason))?;
    phi.provenance = Provenance::LoadedFromFile(path.to_path_buf());
    Ok(phi)
}

pub fn save_classifier_checkpoint(path: &Path, model: &ClassifierModel<f32>) -> Result<()> {
    write_atomic(path, &encode_classifier_checkpoint(model))
}

pub fn load_classifier_checkpoint(path: &Path) -> Result<ClassifierModel<f32>> {
    decode_classifier_checkpoint(&load_checkpoint_bytes(path)?)
        .map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample_views(t: usize, n_z: usize) -> Vec<ViewFeatureSequence<f32>> {
        let mut rng = Rng::new(3);
        [ViewId::Left, ViewId::Right, ViewId::Front]
            .iter()
            .map(|&view_id| ViewFeatureSequence {
                view_id,
                features: Tensor::from_vec(
                    &[t, n_z],
                    (0..t * n_z).map(|_| rng.normal() as f32).collect(),
                )
                .unwrap(),
            })
            .collect()
    }

    #[test]
    fn feature_file_size_formula() {
        // header (9) + 3 * (9 + 300*32*4) + crc (4)
        let views = sample_views(300, 32);
        let bytes = encode_feature_file(&views).unwrap();
        assert_eq!(bytes.len(), 9 + 3 * (9 + 300 * 32 * 4) + 4);
    }

    #[test]
    fn feature_file_round_trips_bitwise() {
        let views = sample_views(17, 8);
        let bytes = encode_feature_file(&views).unwrap();
        let decoded = decode_feature_file(&bytes).unwrap();
        assert_eq!(decoded.len(), 3);
        for (a, b) in decoded.iter().zip(views.iter()) {
            assert_eq!(a.view_id, b.view_id);
            assert_eq!(a.features.data(), b.features.data());
        }
        let re = encode_feature_file(&decoded).unwrap();
        assert_eq!(re, bytes);
    }

    #[test]
    fn corrupted_bytes_are_rejected() {
        let views = sample_views(5, 4);
        let bytes = encode_feature_file(&views).unwrap();
        // Every single-byte flip in the magic and CRC regions fails the load.
        let len = bytes.len();
        let sensitive: Vec<usize> = (0..4).chain(len - 4..len).collect();
        for idx in sensitive {
            let mut bad = bytes.clone();
            bad[idx] ^= 0xFF;
            assert!(decode_feature_file(&bad).is_err(), "byte {idx} accepted");
        }
        // A payload flip trips the CRC too.
        let mut bad = bytes.clone();
        bad[len / 2] ^= 0x01;
        assert!(decode_feature_file(&bad).is_err());
        // Truncation is caught.
        assert!(decode_feature_file(&bytes[..len - 5]).is_err());
    }

    #[test]
    fn ae_checkpoint_round_trip_is_byte_identical() {
        let model = AeModel::<f32>::new(8, 16, 42).unwrap();
        let bytes = encode_ae_checkpoint(&model);
        let loaded = decode_ae_checkpoint(&bytes).unwrap();
        assert_eq!(encode_ae_checkpoint(&loaded), bytes);

        // Same encodings from the loaded model.
        let mut rng = Rng::new(1);
        let frame = Tensor::from_vec(
            &[3, 16, 16],
            (0..3 * 16 * 16)
                .map(|_| (rng.uniform() * 2.0 - 1.0) as f32)
                .collect(),
        )
        .unwrap();
        assert_eq!(
            model.encode(&frame).unwrap().data(),
            loaded.encode(&frame).unwrap().data()
        );
    }

    #[test]
    fn classifier_checkpoint_round_trip() {
        for (use_xva, use_se) in [(true, true), (true, false), (false, true), (false, false)] {
            let cfg = ClassifierConfig {
                n_z: 8,
                views: 2,
                use_xva,
                use_se,
                seed: 9,
            };
            let model = ClassifierModel::<f32>::new(cfg).unwrap();
            let bytes = encode_classifier_checkpoint(&model);
            let loaded = decode_classifier_checkpoint(&bytes).unwrap();
            assert_eq!(encode_classifier_checkpoint(&loaded), bytes);
            assert_eq!(loaded.config, model.config);
        }
    }

    #[test]
    fn perceptual_checkpoint_round_trip() {
        let phi = PerceptualExtractor::<f32>::random_seeded(5);
        let bytes = encode_perceptual_checkpoint(&phi);
        let loaded = decode_perceptual_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.parameter_snapshot(), phi.parameter_snapshot());
        assert_eq!(encode_perceptual_checkpoint(&loaded), bytes);
    }

    #[test]
    fn checkpoint_corruption_and_kind_mixups() {
        let model = AeModel::<f32>::new(8, 16, 1).unwrap();
        let bytes = encode_ae_checkpoint(&model);
        for idx in (0..4).chain(bytes.len() - 4..bytes.len()) {
            let mut bad = bytes.clone();
            bad[idx] ^= 0x55;
            assert!(decode_ae_checkpoint(&bad).is_err(), "byte {idx} accepted");
        }
        // An AE checkpoint is not a classifier.
        assert!(decode_classifier_checkpoint(&bytes).is_err());
    }

    #[test]
    fn missing_checkpoint_has_a_named_path() {
        let err = load_ae_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        let msg = err.to_string();
        assert_eq!(msg, "checkpoint not found: /nonexistent/model.ckpt");
    }
}
