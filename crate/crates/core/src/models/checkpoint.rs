//! Checkpoint container:
//!
//! ```text
//! "MTKDCKPT"                      8-byte magic
//! u32 version (= 1)
//! u32 header length, header       JSON: kind, config, alphabets
//! u32 tensor count
//! per tensor (name order):
//!   u32 name length, UTF-8 name
//!   u32 rank, u32 dims[rank]
//!   f32 values[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelKind, ParamStore, Seq2Seq};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTKDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub src_alphabet: String,
    pub tgt_alphabet: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Seq2Seq> {
        Seq2Seq::new(self.header.kind, self.header.config.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(self.params.count() * 4 + header.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and checks every tensor name and shape against the
    /// architecture the header describes.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint { path: origin.to_path_buf(), reason };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(&fail)? != CHECKPOINT_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let version = r.u32().map_err(&fail)?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = r.u32().map_err(&fail)? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen).map_err(&fail)?)
            .map_err(|e| fail(format!("header: {e}")))?;
        let model = Seq2Seq::new(header.kind, header.config.clone()).map_err(|e| fail(e.to_string()))?;
        let mut expected: BTreeMap<String, Vec<usize>> =
            model.param_specs().into_iter().map(|s| (s.name, s.shape)).collect();
        let count = r.u32().map_err(&fail)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32().map_err(&fail)? as usize;
            let name = String::from_utf8(r.take(nlen).map_err(&fail)?.to_vec())
                .map_err(|_| fail("tensor name is not UTF-8".into()))?;
            let rank = r.u32().map_err(&fail)? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>().map_err(&fail)?;
            let want = expected.remove(&name).ok_or_else(|| fail(format!("unexpected tensor {name:?}")))?;
            if want != shape {
                return Err(fail(format!("tensor {name:?} has shape {shape:?}, expected {want:?}")));
            }
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)
                .map_err(&fail)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor::new(shape, data));
        }
        if let Some(missing) = expected.keys().next() {
            return Err(fail(format!("missing tensor {missing:?}")));
        }
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes".into()));
        }
        Ok(Self { header, params: ParamStore::from_map(tensors) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
