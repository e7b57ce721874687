//! Weight checkpoints.
//!
//! All integers are little-endian u32:
//!
//! ```text
//! "CFDW" | version | tensor count
//! per tensor: name length | name (UTF-8) | rank | dims... | f32 LE data
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CFDW";
pub const VERSION: u32 = 1;

pub type NamedTensors = BTreeMap<String, Tensor<f32>>;

pub fn encode_checkpoint<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<NamedTensors> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "missing CFDW magic".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: format!("checkpoint version {version}"),
        });
    }
    let count = c.u32("tensor count")?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let at = c.pos;
        let len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(len, "name")?.to_vec()).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: at,
            reason: "tensor name is not UTF-8".into(),
        })?;
        let rank = c.u32("rank")? as usize;
        let dims = (0..rank)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = c
            .take(n * 4, "tensor data")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if out.insert(name.clone(), Tensor::from_vec(&dims, data)?).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: at,
                reason: format!("duplicate tensor {name}"),
            });
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: c.pos,
            reason: "trailing bytes after last tensor".into(),
        });
    }
    Ok(out)
}

pub fn save_module<T: Scalar>(path: impl AsRef<Path>, module: &dyn Module<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(&module.named_params())).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub fn load_module<T: Scalar>(path: impl AsRef<Path>, module: &mut dyn Module<T>) -> Result<()> {
    module.load_named(&read_checkpoint(path)?)
}
