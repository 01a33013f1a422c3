//! Model checkpoint file, little-endian like the embedding format:
//!
//! ```text
//! 0   8      magic "DEFTMDL1"
//! 8   4      u32 K
//! 12  4      u32 d
//! 16  4      u32 adapter mode (0 identity, 1 low-rank, 2 full)
//! 20  4      u32 adapter rank
//! 24  4      f32 residual scale
//! 28  4      u32 reserved (0)
//! 32  4*K*d  f32 classifier weights, row-major
//! ..  4*K    f32 classifier bias
//! ..         f32 A (d*rank) then B (rank*d)   low-rank mode
//! ..         f32 W (d*d)                      full mode
//! ```
//!
//! Parameters are stored as `f32`; loading widens them back to `f64`.

use std::io::Write;
use std::path::Path;

use super::{AdapterMode, AdapterParams, LinearClassifier};
use crate::error::{DeftError, Result};
use crate::kernels::Matrix;

pub const MODEL_MAGIC: &[u8; 8] = b"DEFTMDL1";

pub fn encode_checkpoint(classifier: &LinearClassifier, adapter: &AdapterParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let mode = match adapter.mode {
        AdapterMode::Identity => 0u32,
        AdapterMode::LowRank => 1,
        AdapterMode::Full => 2,
    };
    for v in [classifier.num_classes() as u32, classifier.dim() as u32, mode, adapter.rank as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(adapter.residual_scale as f32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let blocks: [&[f64]; 5] = [
        &classifier.weights.data,
        &classifier.bias,
        &adapter.a.data,
        &adapter.b.data,
        &adapter.w.data,
    ];
    for v in blocks.iter().flat_map(|b| b.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(LinearClassifier, AdapterParams)> {
    if bytes.len() < 32 {
        return Err(DeftError::Parse {
            offset: bytes.len() as u64,
            message: format!("truncated checkpoint header: expected 32 bytes, got {}", bytes.len()),
        });
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(DeftError::Parse {
            offset: 0,
            message: "bad magic, expected DEFTMDL1".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (k, d, mode, rank) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let scale = f64::from(f32::from_le_bytes(bytes[24..28].try_into().unwrap()));
    let mode = match mode {
        0 => AdapterMode::Identity,
        1 => AdapterMode::LowRank,
        2 => AdapterMode::Full,
        other => {
            return Err(DeftError::Parse {
                offset: 16,
                message: format!("unknown adapter mode {other}"),
            })
        }
    };
    let (a_len, b_len, w_len) = match mode {
        AdapterMode::Identity => (0, 0, 0),
        AdapterMode::LowRank => (d * rank, rank * d, 0),
        AdapterMode::Full => (0, 0, d * d),
    };
    let floats = k * d + k + a_len + b_len + w_len;
    let expected = 32 + 4 * floats;
    if bytes.len() != expected {
        return Err(DeftError::Parse {
            offset: bytes.len().min(expected) as u64,
            message: format!("checkpoint length mismatch: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes[32..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let mut rest = values.as_slice();
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    let classifier = LinearClassifier {
        weights: Matrix::from_vec(k, d, take(k * d))?,
        bias: take(k),
    };
    let mut adapter = match mode {
        AdapterMode::Identity => AdapterParams::identity(d),
        AdapterMode::LowRank => AdapterParams {
            mode,
            dim: d,
            rank,
            residual_scale: scale,
            a: Matrix::from_vec(d, rank, take(a_len))?,
            b: Matrix::from_vec(rank, d, take(b_len))?,
            w: Matrix::zeros(0, 0),
        },
        AdapterMode::Full => AdapterParams {
            w: Matrix::from_vec(d, d, take(w_len))?,
            ..AdapterParams::full(d)
        },
    };
    adapter.residual_scale = scale;
    adapter.rank = rank;
    Ok((classifier, adapter))
}

pub fn write_checkpoint(path: &Path, classifier: &LinearClassifier, adapter: &AdapterParams) -> Result<()> {
    let bytes = encode_checkpoint(classifier, adapter);
    let mut f = std::fs::File::create(path).map_err(|e| DeftError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| DeftError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(LinearClassifier, AdapterParams)> {
    let bytes = std::fs::read(path).map_err(|e| DeftError::io(path, e))?;
    decode_checkpoint(&bytes)
}
