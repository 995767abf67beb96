//! `SPCK` parameter files: magic, version u8, count u32, then per tensor a
//! u32-length UTF-8 name, partition u8, trainable u8, rank u8, u32 dims and
//! f32 data. All little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParameterStore, Partition};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint<T: Real>(store: &ParameterStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for e in store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.partition.tag());
        out.push(store.is_trainable(e.partition) as u8);
        out.push(e.value.rank() as u8);
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParameterStore::new();
    let mut flags: [Option<bool>; 2] = [None; 2];
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::parse(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let at = r.pos as u64;
        let partition = Partition::from_tag(r.u8("partition")?)
            .ok_or_else(|| Error::parse(at, format!("unknown partition tag for `{name}`")))?;
        let trainable = r.u8("trainable flag")? != 0;
        let slot = &mut flags[partition.tag() as usize];
        if slot.is_some_and(|f| f != trainable) {
            return Err(Error::parse(at + 1, format!("{partition} tensors disagree on the trainable flag")));
        }
        *slot = Some(trainable);
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let at = r.pos as u64;
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::parse(at, format!("`{name}` shape {shape:?} overflows")))?;
        let data = r
            .take(n, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let value = Tensor::new(shape, data)?;
        store
            .insert(name, partition, value)
            .map_err(|e| Error::parse(at, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos as u64, "trailing bytes after last tensor"));
    }
    for p in Partition::ALL {
        store.set_trainable(p, flags[p.tag() as usize].unwrap_or(true));
    }
    Ok(store)
}

pub fn save_checkpoint<T: Real>(store: &ParameterStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterStore<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
