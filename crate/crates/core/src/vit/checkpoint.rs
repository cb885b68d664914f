//! Model checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 8            | magic `VITCKPT1`                                    |
//! | 8            | `u64` length `h` of the JSON header                 |
//! | `h`          | UTF-8 JSON: `layout_version`, `seed`, `config`, and |
//! |              | `params` (name + shape per tensor)                  |
//! | rest         | `f64` values of each tensor, in `params` order      |
//!
//! Tensor order is the declaration order of [`VitParams::entries`].

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{VitConfig, VitParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VITCKPT1";
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layout_version: u32,
    seed: u64,
    config: VitConfig,
    params: Vec<BlockInfo>,
}

pub fn write_checkpoint(mut w: impl Write, params: &VitParams, seed: u64) -> Result<()> {
    let header = Header {
        layout_version: LAYOUT_VERSION,
        seed,
        config: params.config().clone(),
        params: params
            .infos()
            .into_iter()
            .map(|i| BlockInfo {
                name: i.name,
                shape: i.shape,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for (_, t, _) in params.entries() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Returns the parameters and the seed they were initialized from.
pub fn read_checkpoint(mut r: impl Read) -> Result<(VitParams, u64)> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.layout_version != LAYOUT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint layout version {} (supported: {LAYOUT_VERSION})",
            header.layout_version
        )));
    }
    let mut params = VitParams::init(&header.config, header.seed)?;
    let infos = params.infos();
    if infos.len() != header.params.len()
        || infos
            .iter()
            .zip(&header.params)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(Error::Format(
            "parameter table does not match the stored config".into(),
        ));
    }
    let mut blocks = Vec::with_capacity(infos.len());
    let mut buf = [0u8; 8];
    for info in &infos {
        let n: usize = info.shape.iter().product();
        let mut block = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("checkpoint truncated in {}", info.name)))?;
            block.push(f64::from_le_bytes(buf));
        }
        blocks.push(block);
    }
    params.load_flat(&blocks)?;
    Ok((params, header.seed))
}

/// Writes a checkpoint atomically (temporary sibling, then rename).
pub fn save(path: &Path, params: &VitParams, seed: u64) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, params, seed)?;
    crate::data::write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<(VitParams, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
