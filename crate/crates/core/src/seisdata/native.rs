//! Native single-gather file: "SGTH", version, sample type, H, W (u32),
//! row-major samples, then dt and trace spacing as f32; all little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Gather;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SGTH";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 14;
const TRAILER_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    F32,
    F64,
}

impl SampleType {
    fn code(self) -> u8 {
        match self {
            SampleType::F32 => 0,
            SampleType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

pub fn encode_gather(g: &Gather, dtype: SampleType) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + g.samples().len() * dtype.width() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.extend_from_slice(&(g.height() as u32).to_le_bytes());
    out.extend_from_slice(&(g.width() as u32).to_le_bytes());
    for &v in g.samples() {
        match dtype {
            SampleType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            SampleType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out.extend_from_slice(&(g.dt as f32).to_le_bytes());
    out.extend_from_slice(&(g.trace_spacing as f32).to_le_bytes());
    out
}

pub fn decode_gather(bytes: &[u8]) -> Result<Gather> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(bytes.len() as u64, "file shorter than the gather header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::parse(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => SampleType::F32,
        1 => SampleType::F64,
        c => return Err(Error::parse(5, format!("unknown sample type {c}"))),
    };
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (h, w) = (u32_at(6), u32_at(10));
    let expect = HEADER_LEN + h * w * dtype.width() + TRAILER_LEN;
    if bytes.len() != expect {
        return Err(Error::parse(
            bytes.len().min(expect) as u64,
            format!("{h}x{w} gather needs {expect} bytes, file has {}", bytes.len()),
        ));
    }
    let body = &bytes[HEADER_LEN..expect - TRAILER_LEN];
    let samples: Vec<f64> = match dtype {
        SampleType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        SampleType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
    let t = expect - TRAILER_LEN;
    Gather::new(h, w, samples, f32_at(t), f32_at(t + 4))
}

pub fn write_gather(path: impl AsRef<Path>, g: &Gather, dtype: SampleType) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_gather(g, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_gather(path: impl AsRef<Path>) -> Result<Gather> {
    let path = path.as_ref();
    decode_gather(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
