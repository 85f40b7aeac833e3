//! Named-tensor archive: version header, key=value metadata, then
//! (name, shape, raw little-endian f64 values) per parameter. Values are
//! stored as f64 regardless of the kernel scalar in use.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::NnError;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"TNET";
const VERSION: u32 = 1;

/// Ordered key=value metadata (encoder kind, task, ablation flags, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckpointHeader {
    pairs: Vec<(String, String)>,
}

impl CheckpointHeader {
    pub fn new() -> CheckpointHeader {
        CheckpointHeader::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !value.contains('\n'));
        match self.pairs.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.pairs.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, NnError> {
        self.get(key)
            .ok_or_else(|| NnError::CheckpointFormat(format!("missing header key `{key}`")))
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn from_text(text: &str) -> Result<CheckpointHeader, NnError> {
        let mut pairs = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::CheckpointFormat(format!("bad header line `{line}`")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(CheckpointHeader { pairs })
    }
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    store: &ParamStore<S>,
    header: &CheckpointHeader,
) -> Result<(), NnError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let header_text = header.to_text();
    buf.extend_from_slice(&(header_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(header_text.as_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value, _) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.rank() as u32).to_le_bytes());
        for &dim in value.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &x in value.data() {
            buf.extend_from_slice(&x.to_f64().unwrap().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::CheckpointFormat("truncated file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint<S: Scalar>(
    path: &Path,
) -> Result<(ParamStore<S>, CheckpointHeader), NnError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::CheckpointFormat(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = r.u32()? as usize;
    let header_text = std::str::from_utf8(r.take(header_len)?)
        .map_err(|_| NnError::CheckpointFormat("header is not UTF-8".into()))?
        .to_string();
    let header = CheckpointHeader::from_text(&header_text)?;

    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| NnError::CheckpointFormat("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        store.insert(&name, Tensor::from_f64(shape, &data));
    }
    if r.pos != r.buf.len() {
        return Err(NnError::CheckpointFormat("trailing bytes".into()));
    }
    Ok((store, header))
}
