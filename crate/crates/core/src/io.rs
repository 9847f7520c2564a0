//! TMV1 volume files.
//!
//! Layout (little-endian): 8-byte magic `TMVOL001`, `u32` kind
//! (0 = scalar, 1 = vector3), `u32 × 3` dims, `f64 × 3` spacing mm,
//! `f64 × 3` origin mm, then `f32` payload in x-fastest order. Vector
//! payloads interleave the three components per voxel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Grid3, ScalarVolume, VectorKind, VectorVolume};

pub const MAGIC: &[u8; 8] = b"TMVOL001";
pub const HEADER_LEN: usize = 8 + 4 + 12 + 24 + 24;

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    /// Vector payload; the file does not record displacement vs velocity.
    Vector(Grid3, Vec<[f64; 3]>),
}

fn header(kind: u32, grid: &Grid3) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&kind.to_le_bytes());
    for d in grid.dims() {
        h.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in grid.spacing() {
        h.extend_from_slice(&s.to_le_bytes());
    }
    for o in grid.origin() {
        h.extend_from_slice(&o.to_le_bytes());
    }
    h
}

pub fn encode_scalar(v: &ScalarVolume) -> Vec<u8> {
    let mut out = header(0, v.grid());
    out.reserve(v.values().len() * 4);
    for &x in v.values() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn encode_vector(v: &VectorVolume) -> Vec<u8> {
    let mut out = header(1, v.grid());
    out.reserve(v.values().len() * 12);
    for c in v.values() {
        for &x in c {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_scalar(path: impl AsRef<Path>, v: &ScalarVolume) -> Result<()> {
    write_bytes(path.as_ref(), &encode_scalar(v))
}

pub fn write_vector(path: impl AsRef<Path>, v: &VectorVolume) -> Result<()> {
    write_bytes(path.as_ref(), &encode_vector(v))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Volume> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let kind = u32_at(8);
    let dims = [u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
    let spacing = [f64_at(24), f64_at(32), f64_at(40)];
    let origin = [f64_at(48), f64_at(56), f64_at(64)];
    let grid =
        Grid3::new(dims, spacing, origin).map_err(|e| bad(&format!("invalid grid: {e}")))?;
    let comps = match kind {
        0 => 1,
        1 => 3,
        _ => return Err(bad("unknown kind")),
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != grid.len() * comps * 4 {
        return Err(bad("payload length does not match dims"));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if floats.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite payload value"));
    }
    Ok(match kind {
        0 => Volume::Scalar(ScalarVolume::from_parts(grid, floats)),
        _ => Volume::Vector(
            grid,
            floats.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ),
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    match read(path)? {
        Volume::Scalar(v) => Ok(v),
        Volume::Vector(..) => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected a scalar volume".into(),
        }),
    }
}

pub fn read_vector(path: impl AsRef<Path>, kind: VectorKind) -> Result<VectorVolume> {
    let path = path.as_ref();
    match read(path)? {
        Volume::Vector(grid, values) => Ok(VectorVolume::from_parts(grid, values, kind)),
        Volume::Scalar(_) => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected a vector volume".into(),
        }),
    }
}
