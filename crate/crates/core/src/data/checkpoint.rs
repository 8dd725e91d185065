//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "PTECKPT\0"
//! version      u32
//! arch         u32 length + UTF-8 architecture descriptor
//! seed         u64
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u32 rank + u32 dims
//!                f32 values
//! mask flag    u8 (0 = none, 1 = present), then if present:
//!                u8 include_output_layer, u8 include_biases,
//!                u8 scope (0 global, 1 layerwise),
//!                u8 granularity (0 connection, 1 neuron),
//!                u64 bit length, u64 word count, u64 words
//! ```

use std::fs;
use std::path::Path;

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::masks::{Granularity, PrunableOptions, PrunableSet, PruneMask, Scope};
use crate::nn::NetworkGraph;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PTECKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A mask together with the prunable-set options it was drawn over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRecord {
    pub mask: PruneMask,
    pub options: PrunableOptions,
}

impl MaskRecord {
    pub fn prunable(&self, net: &NetworkGraph<f32>) -> PrunableSet {
        PrunableSet::new(net, self.options)
    }

    pub fn keep_flags(&self, net: &NetworkGraph<f32>) -> Result<BitSet> {
        self.mask.keep_flags(&self.prunable(net))
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: NetworkGraph<f32>,
    pub seed: u64,
    pub mask: Option<MaskRecord>,
}

pub fn save_checkpoint(path: &Path, net: &NetworkGraph<f32>, mask: Option<&MaskRecord>, seed: u64) -> Result<()> {
    let mut out = Vec::with_capacity(net.param_count() * 4 + 1024);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut out, &net.arch_descriptor());
    out.extend(seed.to_le_bytes());
    let store = net.params();
    let entries = store.layout().entries();
    out.extend((entries.len() as u32).to_le_bytes());
    for (i, e) in entries.iter().enumerate() {
        put_str(&mut out, &e.name);
        out.extend((e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend((d as u32).to_le_bytes());
        }
        for v in store.tensor(i) {
            out.extend(v.to_le_bytes());
        }
    }
    match mask {
        None => out.push(0),
        Some(rec) => {
            let expected = rec.prunable(net).len();
            if rec.mask.len() != expected {
                return Err(Error::Structure(format!(
                    "mask has {} bits but the network's prunable set has {expected}",
                    rec.mask.len()
                )));
            }
            out.push(1);
            out.push(rec.options.include_output_layer as u8);
            out.push(rec.options.include_biases as u8);
            out.push(match rec.mask.scope() {
                Scope::Global => 0,
                Scope::Layerwise => 1,
            });
            out.push(match rec.mask.granularity() {
                Granularity::Connection => 0,
                Granularity::Neuron => 1,
            });
            let bits = rec.mask.bits();
            out.extend((bits.len() as u64).to_le_bytes());
            out.extend((bits.words().len() as u64).to_le_bytes());
            for w in bits.words() {
                out.extend(w.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic bytes)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let arch = r.string()?;
    let mut net = NetworkGraph::<f32>::from_arch_descriptor(&arch)
        .map_err(|e| Error::format(path, format!("bad architecture descriptor: {e}")))?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let layout = std::sync::Arc::clone(net.params().layout());
    if count != layout.entries().len() {
        return Err(Error::format(
            path,
            format!("{count} tensors stored, architecture needs {}", layout.entries().len()),
        ));
    }
    for (i, e) in layout.entries().iter().enumerate() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != e.name || shape != e.shape {
            return Err(Error::format(
                path,
                format!("tensor {i} is {name} {shape:?}, expected {} {:?}", e.name, e.shape),
            ));
        }
        let raw = r.take(4 * e.len())?;
        for (dst, src) in net.params_mut().tensor_mut(i).iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("4-byte chunk"));
        }
    }
    let mask = match r.u8()? {
        0 => None,
        1 => {
            let options = PrunableOptions {
                include_output_layer: r.flag()?,
                include_biases: r.flag()?,
            };
            let scope = match r.u8()? {
                0 => Scope::Global,
                1 => Scope::Layerwise,
                s => return Err(Error::format(path, format!("unknown scope code {s}"))),
            };
            let granularity = match r.u8()? {
                0 => Granularity::Connection,
                1 => Granularity::Neuron,
                g => return Err(Error::format(path, format!("unknown granularity code {g}"))),
            };
            let len = r.u64()? as usize;
            let n_words = r.u64()? as usize;
            if n_words != len.div_ceil(64) {
                return Err(Error::format(path, format!("{n_words} mask words for {len} bits")));
            }
            let words = (0..n_words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let bits = BitSet::from_words(len, words)
                .ok_or_else(|| Error::format(path, "mask has bits set past its length"))?;
            let rec = MaskRecord {
                mask: PruneMask::new(bits, scope, granularity),
                options,
            };
            let expected = rec.prunable(&net).len();
            if len != expected {
                return Err(Error::format(
                    path,
                    format!("mask has {len} bits, architecture's prunable set has {expected}"),
                ));
            }
            Some(rec)
        }
        f => return Err(Error::format(path, format!("unknown mask flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after checkpoint payload", bytes.len() - r.pos),
        ));
    }
    Ok(Checkpoint { net, seed, mask })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated: needed {n} bytes at offset {}, {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::format(self.path, format!("invalid boolean byte {v}"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "string is not UTF-8"))
    }
}
