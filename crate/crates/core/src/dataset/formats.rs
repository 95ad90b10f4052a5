//! `MSPF` feature files, `MSPP` probability files and plain-text label files.
//!
//! Both binary formats are: 4-byte magic, version `u32`, `T u32`, width `u32`,
//! then `T × width` row-major little-endian `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{write_atomic, ByteReader};
use crate::nncore::Tensor;
use crate::seq::{FeatureSeq, ProbSeq};

pub const FEATURE_MAGIC: &[u8; 4] = b"MSPF";
pub const PROB_MAGIC: &[u8; 4] = b"MSPP";
pub const SEQ_FORMAT_VERSION: u32 = 1;

fn encode_matrix(magic: &[u8; 4], m: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&SEQ_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode_matrix(magic: &[u8; 4], bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes, origin);
    r.expect_magic(magic)?;
    let version = r.u32()?;
    if version != SEQ_FORMAT_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let t = r.u32()? as usize;
    let w = r.u32()? as usize;
    let data = r.f32_vec(t * w)?;
    if !r.is_empty() {
        return Err(Error::format(origin, format!("{} trailing bytes", r.remaining())));
    }
    Tensor::from_vec(&[t, w], data).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn encode_features(f: &FeatureSeq) -> Vec<u8> {
    encode_matrix(FEATURE_MAGIC, f.tensor())
}

pub fn decode_features(bytes: &[u8], origin: &Path) -> Result<FeatureSeq> {
    FeatureSeq::new(decode_matrix(FEATURE_MAGIC, bytes, origin)?)
}

pub fn encode_probs(p: &ProbSeq) -> Vec<u8> {
    encode_matrix(PROB_MAGIC, p.tensor())
}

pub fn decode_probs(bytes: &[u8], origin: &Path) -> Result<ProbSeq> {
    let t = decode_matrix(PROB_MAGIC, bytes, origin)?;
    ProbSeq::new(t).map_err(|e| Error::format(origin, e.to_string()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_features(path: &Path, f: &FeatureSeq) -> Result<()> {
    write_atomic(path, &encode_features(f))
}

pub fn read_features(path: &Path) -> Result<FeatureSeq> {
    decode_features(&read(path)?, path)
}

pub fn write_probs(path: &Path, p: &ProbSeq) -> Result<()> {
    write_atomic(path, &encode_probs(p))
}

pub fn read_probs(path: &Path) -> Result<ProbSeq> {
    decode_probs(&read(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {}: not a label: {l:?}", i + 1)))
        })
        .collect()
}

pub fn write_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let labels: Vec<usize> = mask.iter().map(|&b| b as usize).collect();
    write_labels(path, &labels)
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    read_labels(path)?
        .into_iter()
        .map(|v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(path, format!("mask value {other} is not 0/1"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probs_survive_f32_round_trip() {
        let p = ProbSeq::new(Tensor::from_rows(&[vec![0.1, 0.2, 0.7], vec![1.0 / 3.0; 3]]).unwrap()).unwrap();
        let bytes = encode_probs(&p);
        let back = decode_probs(&bytes, Path::new("m")).unwrap();
        assert_eq!(encode_probs(&back), bytes);
        assert!(back.tensor().max_abs_diff(p.tensor()) < 1e-7);
    }

    #[test]
    fn magic_confusion_rejected() {
        let f = FeatureSeq::new(Tensor::zeros(&[2, 3])).unwrap();
        let bytes = encode_features(&f);
        assert!(decode_probs(&bytes, Path::new("m")).is_err());
        assert!(decode_features(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
    }
}
