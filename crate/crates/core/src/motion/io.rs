//! Versioned binary persistence for trained weights.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "DMMN"
//! version u32      currently 1
//! d_model u32
//! heads   u32
//! layers  u32
//! d_ff    u32
//! k_in    u32
//! pe_base f64
//! tensors f64...   canonical order: embed_w (2 x d_model), embed_b (1 x d_model),
//!                  then per encoder layer: wq, bq, wk, bk, wv, bv, wo, bo,
//!                  ln1_gain, ln1_bias, ff_w1, ff_b1, ff_w2, ff_b2,
//!                  ln2_gain, ln2_bias, finally dec_w (d_model x 2), dec_b (1 x 2).
//!                  Matrices are row-major; shapes follow from the header.
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{DmmnHyper, DmmnParams};

const MAGIC: &[u8; 4] = b"DMMN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights format version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid architecture in header: {0}")]
    BadHyper(String),
    #[error("weights file is truncated")]
    Truncated,
    #[error("weights file contains non-finite values")]
    NonFinite,
}

pub fn save_params(params: &DmmnParams, path: &Path) -> Result<(), WeightsError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        params.hyper.d_model,
        params.hyper.heads,
        params.hyper.layers,
        params.hyper.d_ff,
        params.hyper.k_in,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&params.hyper.pe_base.to_le_bytes())?;
    for tensor in params.tensors() {
        for value in &tensor.data {
            w.write_all(&value.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<DmmnParams, WeightsError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let hyper = DmmnHyper {
        d_model: read_u32(&mut r)? as usize,
        heads: read_u32(&mut r)? as usize,
        layers: read_u32(&mut r)? as usize,
        d_ff: read_u32(&mut r)? as usize,
        k_in: read_u32(&mut r)? as usize,
        pe_base: read_f64(&mut r)?,
    };
    hyper.validate().map_err(WeightsError::BadHyper)?;

    // Build a correctly shaped skeleton, then fill tensors in canonical order.
    let mut rng = crate::rng::stream(0, crate::rng::StreamKind::Training);
    let mut params = DmmnParams::init(hyper, &mut rng);
    for tensor in params.tensors_mut() {
        for slot in tensor.data.iter_mut() {
            *slot = read_f64(&mut r)?;
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(WeightsError::BadHyper("trailing bytes after weights".into()));
    }
    if !params.is_finite() {
        return Err(WeightsError::NonFinite);
    }
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), WeightsError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            WeightsError::Truncated
        } else {
            WeightsError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, WeightsError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, WeightsError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
