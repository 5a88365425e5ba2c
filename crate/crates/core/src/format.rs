//! Binary model file, little-endian, no padding:
//!
//! ```text
//! "CSG1"  u16 version  u16 D  u16 short  u16 medium  u16 long  u32 N  u16 K
//! f32 weights_short[D*short]  f32 weights_medium[D*medium]  f32 weights_long[D*long]
//! f32 W_f[D*4D]  f32 log_w_s  f32 log_w_m  f32 log_w_l  f32 log_gamma
//! N x f32[4D+1]  (z_short, z_medium, z_long, dz, dx)
//! ```
//! Matrices are row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::encoder::EncoderParams;
use crate::error::{CometError, Result};
use crate::linalg::Matrix;
use crate::memory::{MemoryStore, RetrievalParams};
use crate::model::{CometModel, CorrectionParams};
use crate::series::WindowSpec;

pub const MAGIC: &[u8; 4] = b"CSG1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

struct Header {
    dim: usize,
    spec: WindowSpec,
    count: usize,
    k: usize,
}

impl Header {
    fn payload_floats(&self) -> usize {
        let d = self.dim;
        d * self.spec.total_len() + 4 * d * d + 4 + self.count * (4 * d + 1)
    }

    fn file_len(&self) -> usize {
        HEADER_LEN + 4 * self.payload_floats()
    }
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| CometError::InvalidConfig(format!("{what} = {v} exceeds u16")))
}

pub fn to_bytes(model: &CometModel) -> Result<Vec<u8>> {
    let spec = model.window_spec;
    let header = Header {
        dim: model.dim(),
        spec,
        count: model.memory.len(),
        k: model.retrieval.k,
    };
    let mut out = Vec::with_capacity(header.file_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u16(header.dim, "latent dimension")?.to_le_bytes());
    for len in spec.lens() {
        out.extend_from_slice(&to_u16(len, "window length")?.to_le_bytes());
    }
    let n = u32::try_from(header.count)
        .map_err(|_| CometError::InvalidConfig("memory count exceeds u32".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&to_u16(header.k, "k")?.to_le_bytes());

    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    };
    for m in model.encoder.matrices() {
        put(m.as_slice());
    }
    put(model.correction.weights.as_slice());
    put(&model.retrieval.log_w);
    put(&[model.retrieval.log_gamma]);
    put(model.memory.flat());
    debug_assert_eq!(out.len(), header.file_len());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<CometModel> {
    if bytes.len() < MAGIC.len() {
        return Err(CometError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CometError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CometError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let u16_at = |off: usize| u16::from_le_bytes([bytes[off], bytes[off + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != VERSION {
        return Err(CometError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let header = Header {
        dim: u16_at(6),
        spec: WindowSpec {
            short_len: u16_at(8),
            medium_len: u16_at(10),
            long_len: u16_at(12),
        },
        count: u32::from_le_bytes([bytes[14], bytes[15], bytes[16], bytes[17]]) as usize,
        k: u16_at(18),
    };
    if header.dim == 0 {
        return Err(CometError::MalformedModel(
            "latent dimension is zero".into(),
        ));
    }
    header
        .spec
        .validate()
        .map_err(|e| CometError::MalformedModel(e.to_string()))?;
    if header.k == 0 || header.k > header.count {
        return Err(CometError::MalformedModel(format!(
            "k = {} incompatible with {} memory entries",
            header.k, header.count
        )));
    }
    let expected = header.file_len();
    if bytes.len() < expected {
        return Err(CometError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CometError::TrailingBytes {
            expected,
            actual: bytes.len(),
        });
    }

    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    if let Some(pos) = floats.clone().position(|v| !v.is_finite()) {
        return Err(CometError::MalformedModel(format!(
            "non-finite value at float offset {pos}"
        )));
    }
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let d = header.dim;
    let [s, m, l] = header.spec.lens();
    let encoder = EncoderParams {
        short: Matrix::from_vec(d, s, take(d * s))?,
        medium: Matrix::from_vec(d, m, take(d * m))?,
        long: Matrix::from_vec(d, l, take(d * l))?,
    };
    let correction = CorrectionParams {
        weights: Matrix::from_vec(d, 4 * d, take(4 * d * d))?,
    };
    let scalars = take(4);
    let retrieval = RetrievalParams {
        log_w: [scalars[0], scalars[1], scalars[2]],
        log_gamma: scalars[3],
        k: header.k,
    };
    let memory = MemoryStore::from_flat(d, take(header.count * (4 * d + 1)))?;
    CometModel::new(encoder, correction, retrieval, memory, header.spec)
}

pub fn save_model(model: &CometModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CometModel> {
    from_bytes(&fs::read(path)?)
}
