//! Model checkpoints.
//!
//! Little-endian layout: magic `ECFM`, version (u16), byte-order marker
//! `0xFEFF` (u16), spatial dimension (u8), length of the JSON config echo
//! (u32), the config echo, parameter count (u64), the parameters (f64) and a
//! CRC-32 of everything before it.

use std::fs;
use std::path::Path;

use super::{OperatorConfig, OperatorModel};
use crate::error::{EcfError, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ECFM";
const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &OperatorModel) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let mut b = Vec::with_capacity(32 + config.len() + 8 * model.len());
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&0xFEFFu16.to_le_bytes());
    b.push(model.dims() as u8);
    b.extend_from_slice(&(config.len() as u32).to_le_bytes());
    b.extend_from_slice(&config);
    b.extend_from_slice(&(model.len() as u64).to_le_bytes());
    for p in model.params() {
        b.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<OperatorModel> {
    let fail = |m: &str| EcfError::Format(format!("checkpoint: {m}"));
    if bytes.len() < 17 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    if u16::from_le_bytes([bytes[6], bytes[7]]) != 0xFEFF {
        return Err(fail("not a little-endian checkpoint"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(fail("checksum mismatch"));
    }
    let dims = body[8] as usize;
    let clen = u32::from_le_bytes(body[9..13].try_into().unwrap()) as usize;
    let cfg_end = 13 + clen;
    if body.len() < cfg_end + 8 {
        return Err(fail("truncated header"));
    }
    let config: OperatorConfig =
        serde_json::from_slice(&body[13..cfg_end]).map_err(|e| fail(&format!("config echo: {e}")))?;
    let count = u64::from_le_bytes(body[cfg_end..cfg_end + 8].try_into().unwrap()) as usize;
    let data = &body[cfg_end + 8..];
    if data.len() != 8 * count {
        return Err(fail(&format!("payload size mismatch: {count} parameters declared, {} bytes present", data.len())));
    }
    let params = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    OperatorModel::from_params(config, dims, params)
}

pub fn write_checkpoint(model: &OperatorModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn read_checkpoint(path: &Path) -> Result<OperatorModel> {
    let bytes = fs::read(path).map_err(|e| EcfError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        EcfError::Format(m) => EcfError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
