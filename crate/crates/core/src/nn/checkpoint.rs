//! Versioned binary checkpoint of named parameters.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SIDK" | version: u32 | count: u32 |
//!   count × ( name_len: u32 | name: utf-8 | rows: u32 | cols: u32 | rows·cols × f32 )
//! ```

use std::path::Path;

use super::optim::ParamStore;
use super::tensor::Tensor2;
use crate::io::{read_file, write_atomic, ByteReader, FormatError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SIDK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.scalar_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::BadVersion {
            offset: at,
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| FormatError::Malformed {
                offset: at,
                detail: format!("parameter name is not utf-8: {e}"),
            })?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.f32s(rows * cols)?;
        params.insert(name, Tensor2::new(rows, cols, data).expect("length read"));
    }
    if r.remaining() != 0 {
        return Err(FormatError::Malformed {
            offset: r.offset(),
            detail: format!("{} trailing bytes", r.remaining()),
        });
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, FormatError> {
    decode_checkpoint(&read_file(path)?)
}
