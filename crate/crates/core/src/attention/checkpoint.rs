//! On-disk parameter checkpoints: a short magic, a length-prefixed JSON
//! header describing shapes and provenance, then the weights as little-endian
//! f32 in row-major order (w1, w2, decoder), matching the corpus binary float
//! encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMode, AttentionParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

const CHECKPOINT_MAGIC: &[u8; 4] = b"HICP";
const CHECKPOINT_VERSION: u8 = 0x01;

/// Provenance carried alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    mode: String,
    d: usize,
    h: usize,
    rescale: bool,
    seed: u64,
    epoch: u64,
    shapes: Shapes,
}

#[derive(Serialize, Deserialize)]
struct Shapes {
    w1: [usize; 2],
    w2: [usize; 2],
    decoder: [usize; 2],
}

fn mode_tag(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::PerDim => "per-dim",
        AttentionMode::PerUtterance => "per-utterance",
        AttentionMode::Off => "off",
    }
}

fn parse_mode(tag: &str) -> Result<AttentionMode> {
    match tag {
        "per-dim" => Ok(AttentionMode::PerDim),
        "per-utterance" => Ok(AttentionMode::PerUtterance),
        "off" => Ok(AttentionMode::Off),
        other => Err(Error::BadFormat(format!("unknown attention mode {other:?}"))),
    }
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &AttentionParams<S>,
    meta: CheckpointMeta,
) -> Result<()> {
    let header = Header {
        mode: mode_tag(params.mode).to_string(),
        d: params.dim(),
        h: params.hidden(),
        rescale: params.rescale,
        seed: meta.seed,
        epoch: meta.epoch,
        shapes: Shapes {
            w1: [params.w1.rows(), params.w1.cols()],
            w2: [params.w2.rows(), params.w2.cols()],
            decoder: [params.decoder.rows(), params.decoder.cols()],
        },
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Internal(format!("checkpoint header encoding failed: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for mat in [&params.w1, &params.w2, &params.decoder] {
        for v in mat.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(AttentionParams<S>, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadFormat("not a parameter checkpoint".into()));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported checkpoint version {}",
            version[0]
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::BadFormat(format!("bad checkpoint header: {e}")))?;
    let mode = parse_mode(&header.mode)?;

    let mut read_mat = |shape: [usize; 2]| -> Result<Mat<S>> {
        let count = shape[0] * shape[1];
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|_| {
                Error::BadFormat("checkpoint payload shorter than declared shapes".into())
            })?;
            data.push(S::of(f32::from_le_bytes(buf) as f64));
        }
        Ok(Mat::from_vec(shape[0], shape[1], data))
    };
    let w1 = read_mat(header.shapes.w1)?;
    let w2 = read_mat(header.shapes.w2)?;
    let decoder = read_mat(header.shapes.decoder)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::BadFormat("trailing bytes after checkpoint payload".into()));
    }

    if w1.rows() != header.h || w1.cols() != header.d {
        return Err(Error::BadFormat("checkpoint shapes disagree with header".into()));
    }
    Ok((
        AttentionParams {
            mode,
            w1,
            w2,
            decoder,
            rescale: header.rescale,
        },
        CheckpointMeta {
            seed: header.seed,
            epoch: header.epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_weights_bitwise_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let params = AttentionParams::<f32>::init(6, 4, AttentionMode::PerDim, 42);
        let meta = CheckpointMeta { seed: 42, epoch: 100 };
        save_checkpoint(&path, &params, meta).unwrap();
        let (loaded, got_meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(got_meta, meta);
    }

    #[test]
    fn round_trip_f64_within_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let params = AttentionParams::<f64>::init(5, 3, AttentionMode::PerUtterance, 9);
        save_checkpoint(&path, &params, CheckpointMeta { seed: 9, epoch: 7 }).unwrap();
        let (loaded, _) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(loaded.mode, AttentionMode::PerUtterance);
        for (a, b) in loaded.w1.data().iter().zip(params.w1.data()) {
            assert!((a - b).abs() <= f32::EPSILON as f64 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        std::fs::write(&path, b"NOPE rest").unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());

        let good = dir.path().join("good.bin");
        let params = AttentionParams::<f32>::init(4, 3, AttentionMode::PerDim, 1);
        save_checkpoint(&good, &params, CheckpointMeta { seed: 1, epoch: 1 }).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint::<f32>(&cut).unwrap_err();
        assert!(err.to_string().contains("shorter"));
    }
}
