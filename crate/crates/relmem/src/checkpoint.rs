//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! RELMEMLM1\n
//! header length, header bytes      (UTF-8 "key = value" lines)
//! record count
//! per record: name length, name, rank, dims..., f64 payload
//! ```
//!
//! The header carries `vocab_size` followed by the full run settings.

use std::path::Path;

use relmem_core::model::Parameters;
use relmem_core::Tensor;

use crate::config::Settings;

pub const MAGIC: &[u8] = b"RELMEMLM1\n";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

pub fn encode(settings: &Settings, params: &Parameters) -> Vec<u8> {
    let header = format!("vocab_size = {}\n{}", settings.run.model.vocab_size, settings.render());
    let mut out = MAGIC.to_vec();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
    put(&mut out, header.len());
    out.extend_from_slice(header.as_bytes());
    put(&mut out, params.names().len());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put(&mut out, t.shape().len());
        for &d in t.shape() {
            put(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(malformed("truncated checkpoint"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().unwrap());
        usize::try_from(v).map_err(|_| malformed("length overflow"))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u64()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("non UTF-8 text"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Settings, Parameters), CheckpointError> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| malformed("missing RELMEMLM1 magic"))?;
    let mut r = Reader { buf: rest };
    let header = r.string()?;
    let (first, body) = header.split_once('\n').unwrap_or((&header, ""));
    let vocab_size: usize = first
        .strip_prefix("vocab_size = ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("header must start with vocab_size"))?;
    let mut settings = Settings::parse(body).map_err(|e| malformed(format!("header: {e}")))?;
    settings.run.model.vocab_size = vocab_size;
    let count = r.u64()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u64()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        if shape.is_empty() || shape.contains(&0) {
            return Err(malformed(format!("tensor {name} has an empty shape")));
        }
        let n = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed("tensor too large"))?;
        let data = r.take(n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, Tensor::new(&shape, data)));
    }
    if !r.buf.is_empty() {
        return Err(malformed("trailing bytes after last record"));
    }
    let params = Parameters::from_named(&settings.run.model, named).map_err(|e| malformed(e.to_string()))?;
    Ok((settings, params))
}

pub fn save(path: &Path, settings: &Settings, params: &Parameters) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(settings, params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(Settings, Parameters), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

