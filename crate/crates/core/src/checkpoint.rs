//! Binary checkpoint format for parameter stores.
//!
//! Layout (all integers little-endian except the magic):
//!
//! ```text
//! magic    b"SPNW"
//! version  u32 (currently 1)
//! meta_len u32, then UTF-8 JSON metadata
//! count    u32
//! entry *  u16 name length, UTF-8 name,
//!          u8 dtype (0 = 32-bit real), u8 rank, rank x u32 dims,
//!          prod(dims) x f32 values
//! crc      u32, CRC32 of every byte between the magic and this field
//! ```
//!
//! Entries are written in parameter-store order (lexicographic by name), so
//! saving the same store twice produces identical bytes. Only parameter
//! values are persisted; gradients and momentum restart at zero on load.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supernet::{Allocation, BlockKind, SuperNet};
use crate::tensor::{ParameterStore, Tensor};

pub const MAGIC: [u8; 4] = *b"SPNW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Provenance carried inside every checkpoint: enough to rebuild the
/// network the parameters belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub allocation: Allocation,
    pub kind: BlockKind,
    pub seed: u64,
    /// Which pipeline phase produced this snapshot, e.g. `"supernet-source"`.
    pub phase: String,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_extent: usize,
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Serializes a store with its metadata. Byte-identical for identical
/// inputs.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, store: &ParameterStore) -> Result<()> {
    let bytes = encode(meta, store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode(meta: &CheckpointMeta, store: &ParameterStore) -> Result<Vec<u8>> {
    let meta_json =
        serde_json::to_string(meta).map_err(|e| Error::contract(format!("meta encode: {e}")))?;
    let mut body = Vec::new();
    body.write_u32::<LittleEndian>(VERSION).expect("vec write");
    body.write_u32::<LittleEndian>(meta_json.len() as u32)
        .expect("vec write");
    body.extend_from_slice(meta_json.as_bytes());
    body.write_u32::<LittleEndian>(store.len() as u32)
        .expect("vec write");
    for (name, param) in store.iter() {
        if name.len() > u16::MAX as usize {
            return Err(Error::contract(format!("parameter name too long: {name}")));
        }
        param.value.ensure_finite(name)?;
        body.write_u16::<LittleEndian>(name.len() as u16)
            .expect("vec write");
        body.extend_from_slice(name.as_bytes());
        body.push(DTYPE_F32);
        let shape = param.value.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::contract(format!("rank {} too large", shape.len())));
        }
        body.push(shape.len() as u8);
        for &d in shape {
            body.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        for &v in param.value.data() {
            body.write_f32::<LittleEndian>(v).expect("vec write");
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(4 + body.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&body);
    out.write_u32::<LittleEndian>(crc).expect("vec write");
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParameterStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { detail, .. } => format_err(path, detail),
        other => other,
    })
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, ParameterStore)> {
    let anon = Path::new("<bytes>");
    if bytes.len() < 12 {
        return Err(format_err(anon, format!("truncated: {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(format_err(
            anon,
            format!("bad magic {:02x?}, want {:02x?}", &bytes[..4], MAGIC),
        ));
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored_crc = LittleEndian::read_u32(&bytes[bytes.len() - 4..]);
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(format_err(
            anon,
            format!("crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        ));
    }

    let mut cur = Cursor { buf: body, pos: 0 };
    let version = cur.u32(anon)?;
    if version != VERSION {
        return Err(format_err(
            anon,
            format!("unsupported version {version}, want {VERSION}"),
        ));
    }
    let meta_len = cur.u32(anon)? as usize;
    let meta_bytes = cur.take(meta_len, anon)?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| format_err(anon, format!("metadata json: {e}")))?;
    let count = cur.u32(anon)? as usize;
    let mut store = ParameterStore::new();
    for i in 0..count {
        let name_len = cur.u16(anon)? as usize;
        let name_bytes = cur.take(name_len, anon)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| format_err(anon, format!("entry {i}: name not utf-8")))?
            .to_string();
        let dtype = cur.u8(anon)?;
        if dtype != DTYPE_F32 {
            return Err(format_err(anon, format!("{name}: unsupported dtype {dtype}")));
        }
        let rank = cur.u8(anon)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(anon)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4, anon)?;
        let mut data = vec![0.0f32; numel];
        LittleEndian::read_f32_into(raw, &mut data);
        let tensor = Tensor::new(&shape, data)?;
        store
            .insert(&name, tensor)
            .map_err(|_| format_err(anon, format!("duplicate parameter {name}")))?;
    }
    if cur.pos != cur.buf.len() {
        return Err(format_err(
            anon,
            format!("{} trailing bytes after table", cur.buf.len() - cur.pos),
        ));
    }
    Ok((meta, store))
}

/// Loads a checkpoint and rebuilds the network it describes.
pub fn restore_supernet(path: &Path) -> Result<(CheckpointMeta, SuperNet)> {
    let (meta, store) = load_checkpoint(path)?;
    let net = SuperNet::from_parts(
        meta.kind,
        meta.allocation.clone(),
        meta.num_classes,
        meta.input_channels,
        meta.input_extent,
        store,
    )?;
    Ok((meta, net))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, path: &Path) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(format_err(
                path,
                format!(
                    "truncated: want {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, path: &Path) -> Result<u8> {
        Ok(self.take(1, path)?[0])
    }

    fn u16(&mut self, path: &Path) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, path)?))
    }

    fn u32(&mut self, path: &Path) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, path)?))
    }
}
