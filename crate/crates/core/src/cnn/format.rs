//! `LXCN` model files: magic, version, JSON config block, label map,
//! vocabulary, then every parameter array in declaration order as
//! little-endian f32.

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::binio::{read_file, Reader, Writer};
use crate::corpus::LabelMap;
use crate::error::{Error, Result};
use crate::neural::Array;

const MAGIC: &[u8; 4] = b"LXCN";
const VERSION: u32 = 1;

pub fn model_to_bytes(params: &ModelParams, labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.len() != params.config.classes {
        return Err(Error::LabelMismatch(format!(
            "{} labels for a {}-class model",
            labels.len(),
            params.config.classes
        )));
    }
    let mut w = Writer::new(MAGIC, VERSION);
    w.json(&params.config)?;
    w.u64(labels.len() as u64);
    for l in labels.labels() {
        w.str(l);
    }
    w.u64(params.vocab().len() as u64);
    for t in params.vocab() {
        w.str(t);
    }
    for a in params.arrays() {
        w.f32s(a.data());
    }
    Ok(w.into_bytes())
}

pub fn save_model(params: &ModelParams, labels: &LabelMap, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(params, labels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(ModelParams, LabelMap)> {
    let mut r = Reader::open(bytes, MAGIC, VERSION)?;
    let config: ModelConfig = r.json()?;
    config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    let bound = bytes.len() as u64;
    let k = r.count("label", bound)?;
    let labels = (0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let labels = LabelMap::from_labels(labels).map_err(|e| Error::Corrupt(e.to_string()))?;
    let v = r.count("vocabulary", bound)?;
    let vocab = (0..v).map(|_| r.str()).collect::<Result<Vec<_>>>()?;

    let (d, f) = (config.dim, config.filters);
    let mut read = |shape: &[usize]| -> Result<Array<f32>> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| Error::Corrupt("array size overflows".into()))?;
        Array::from_vec(shape, r.f32s(n)?)
    };
    let embedding = read(&[v, d])?;
    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    for k in config.sorted_kernels() {
        conv_w.push(read(&[f, k, d])?);
        conv_b.push(read(&[f])?);
    }
    let h = config.feature_width();
    let out_w = read(&[config.classes, h])?;
    let out_b = read(&[config.classes])?;
    r.finish()?;
    if labels.len() != config.classes {
        return Err(Error::Corrupt(format!(
            "{} labels for a {}-class model",
            labels.len(),
            config.classes
        )));
    }
    let params = ModelParams::new(config, vocab, embedding, conv_w, conv_b, out_w, out_b)?;
    Ok((params, labels))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, LabelMap)> {
    model_from_bytes(&read_file(path)?)
}
