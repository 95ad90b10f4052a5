//! `MSCK` checkpoint files.
//!
//! Layout: magic `MSCK`, version `u32`, then one record per parameter until EOF:
//! name length `u32`, UTF-8 name, rank `u32`, `rank` dims as `u32`, payload of
//! little-endian `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{write_atomic, ByteReader};
use crate::nncore::params::ParamSet;
use crate::nncore::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<ParamSet> {
    let mut r = ByteReader::new(bytes, origin);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let mut params = ParamSet::new();
    while !r.is_empty() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r.f32_vec(n)?;
        let t =
            Tensor::from_vec(&shape, data).map_err(|e| Error::format(origin, format!("parameter {name:?}: {e}")))?;
        params.add(name, t).map_err(|e| Error::format(origin, e.to_string()))?;
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.add(
            "a.w",
            Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1e-9, 5.0, -7.5]).unwrap(),
        )
        .unwrap();
        p.add("a.b", Tensor::from_vec(&[3], vec![0.0, 1.0, 2.0]).unwrap())
            .unwrap();
        p.add("k", Tensor::zeros(&[3, 1, 2])).unwrap();
        p
    }

    #[test]
    fn byte_exact_round_trip() {
        let bytes = encode_checkpoint(&sample());
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(
            back.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
            ["a.w", "a.b", "k"]
        );
        assert_eq!(back.iter().nth(2).unwrap().value.shape(), &[3, 1, 2]);
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let mut bytes = encode_checkpoint(&sample());
        let short = &bytes[..bytes.len() - 2];
        assert!(matches!(
            decode_checkpoint(short, Path::new("m")),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        let err = decode_checkpoint(&bytes, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
