//! On-disk cache of preprocessed graphs.
//!
//! Little-endian layout:
//!
//! ```text
//! "SE2P" | u32 version=1 | u32 stage | u32 R | u32 L | u32 d | u64 count
//! count × { u32 n | u32 label | f32 payload[..] }
//! count × u64 absolute offset of each graph record
//! ```
//!
//! `L` is the number of stored diffusion levels minus one, so a
//! single-level ablation cache records `L = 0`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diffusion::{PreprocessedGraph, Stage};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"SE2P";
pub const CACHE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub stage: Stage,
    pub r: usize,
    pub levels: usize,
    pub d: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    pub header: CacheHeader,
    pub graphs: Vec<PreprocessedGraph>,
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidParam(format!("{what} {v} does not fit in u32")))
}

/// Serializes `graphs` (which must all share one stage and shape family).
pub fn encode_cache(graphs: &[PreprocessedGraph]) -> Result<Vec<u8>> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidParam("cannot cache an empty graph list".into()))?;
    for g in graphs {
        g.check()?;
        if (g.stage, g.r, g.levels, g.d) != (first.stage, first.r, first.levels, first.d) {
            return Err(Error::InvalidParam(
                "cached graphs must share stage, R, levels and d".into(),
            ));
        }
    }
    let payload_bytes: usize = graphs.iter().map(|g| 8 + 4 * g.payload.len()).sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + payload_bytes + 8 * graphs.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(first.stage as u32).to_le_bytes());
    buf.extend_from_slice(&u32_of(first.r, "R")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(first.levels - 1, "L")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(first.d, "d")?.to_le_bytes());
    buf.extend_from_slice(&(graphs.len() as u64).to_le_bytes());

    let mut offsets = Vec::with_capacity(graphs.len());
    for g in graphs {
        offsets.push(buf.len() as u64);
        buf.extend_from_slice(&u32_of(g.n, "node count")?.to_le_bytes());
        buf.extend_from_slice(&u32_of(g.label, "label")?.to_le_bytes());
        for v in &g.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for off in offsets {
        buf.extend_from_slice(&off.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_cache(graphs: &[PreprocessedGraph], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cache(graphs)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(self.corrupt(format!(
                "truncated: need {len} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_header(rd: &mut Reader<'_>) -> Result<CacheHeader> {
    if rd.take(4)? != CACHE_MAGIC {
        rd.pos = 0;
        return Err(rd.corrupt("bad magic"));
    }
    let version = rd.u32()?;
    if version != CACHE_VERSION {
        rd.pos -= 4;
        return Err(rd.corrupt(format!("unsupported version {version}")));
    }
    let raw_stage = rd.u32()?;
    let stage = Stage::from_u32(raw_stage).ok_or_else(|| Error::Corrupt {
        offset: 8,
        msg: format!("unknown stage {raw_stage}"),
    })?;
    let r = rd.u32()? as usize;
    let levels = rd.u32()? as usize + 1;
    let d = rd.u32()? as usize;
    let count = rd.u64()? as usize;
    Ok(CacheHeader {
        stage,
        r,
        levels,
        d,
        count,
    })
}

fn decode_graph(rd: &mut Reader<'_>, h: &CacheHeader) -> Result<PreprocessedGraph> {
    let n = rd.u32()? as usize;
    let label = rd.u32()? as usize;
    let len = h.stage.payload_len(n, h.r, h.levels, h.d);
    let bytes = rd.take(len.checked_mul(4).ok_or_else(|| rd.corrupt("payload overflow"))?)?;
    let payload = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(PreprocessedGraph {
        stage: h.stage,
        n,
        r: h.r,
        levels: h.levels,
        d: h.d,
        label,
        payload,
    })
}

/// Parses a whole cache; any inconsistency yields [`Error::Corrupt`] and no
/// partial result.
pub fn decode_cache(buf: &[u8]) -> Result<Cache> {
    let mut rd = Reader { buf, pos: 0 };
    let header = decode_header(&mut rd)?;
    let index_len = header
        .count
        .checked_mul(8)
        .filter(|&len| len <= buf.len())
        .ok_or_else(|| rd.corrupt(format!("graph count {} exceeds file size", header.count)))?;
    let mut graphs = Vec::with_capacity(header.count);
    let mut offsets = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        offsets.push(rd.pos as u64);
        graphs.push(decode_graph(&mut rd, &header)?);
    }
    for (i, &expected) in offsets.iter().enumerate() {
        let stored = rd.u64()?;
        if stored != expected {
            rd.pos -= 8;
            return Err(rd.corrupt(format!("index entry {i} is {stored}, record starts at {expected}")));
        }
    }
    if rd.pos != buf.len() {
        return Err(rd.corrupt(format!("{} trailing bytes", buf.len() - rd.pos)));
    }
    debug_assert_eq!(index_len, 8 * header.count);
    Ok(Cache { header, graphs })
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Cache> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

/// Reads only the header of a cache file.
pub fn read_cache_header(path: impl AsRef<Path>) -> Result<CacheHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&mut Reader { buf: &bytes, pos: 0 })
}

/// Random access to graph `index` through the trailing offset table.
pub fn read_cached_graph(buf: &[u8], index: usize) -> Result<PreprocessedGraph> {
    let mut rd = Reader { buf, pos: 0 };
    let header = decode_header(&mut rd)?;
    if index >= header.count {
        return Err(Error::InvalidParam(format!(
            "graph {index} out of range for {} graphs",
            header.count
        )));
    }
    let index_start = buf
        .len()
        .checked_sub(8 * header.count)
        .filter(|&s| s >= HEADER_LEN)
        .ok_or_else(|| rd.corrupt("file too short for its offset index"))?;
    rd.pos = index_start + 8 * index;
    let off = rd.u64()? as usize;
    if off < HEADER_LEN || off >= index_start {
        return Err(rd.corrupt(format!("offset {off} outside the record area")));
    }
    rd.pos = off;
    decode_graph(&mut rd, &header)
}
