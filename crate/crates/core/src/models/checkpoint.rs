//! Named-array container used for model and optimizer checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SGARRAY\0"
//! version  u32      CONTAINER_VERSION
//! hlen     u64      length of the JSON header
//! header   hlen     {"meta": ..., "arrays": [{"name", "shape"}, ...]}
//! payload           f32 values of every array, in header order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, Mode, ModelState};
use crate::error::{Error, Result};
use crate::tensor::Real;

const MAGIC: &[u8; 8] = b"SGARRAY\0";
pub const CONTAINER_VERSION: u32 = 1;
/// Version of the model checkpoint schema stored in the header metadata.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Named f32 arrays plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayFile {
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl ArrayFile {
    pub fn push<T: Real>(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[T]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays
            .push((name.into(), shape, data.iter().map(|v| v.to_f32().unwrap()).collect()));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, shape, _)| ArrayEntry { name: name.clone(), shape: shape.clone() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &self.arrays {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not an array container (bad magic)"));
        }
        let mut word = [0u8; 4];
        bytes.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != CONTAINER_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version} (expected {CONTAINER_VERSION})"
            )));
        }
        let mut dword = [0u8; 8];
        bytes.read_exact(&mut dword).map_err(|_| bad("truncated header length"))?;
        let hlen = u64::from_le_bytes(dword) as usize;
        if bytes.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[..hlen])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        bytes = &bytes[hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            if bytes.len() < 4 * n {
                return Err(Error::Checkpoint(format!("payload of {} truncated", entry.name)));
            }
            let data = bytes[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            bytes = &bytes[4 * n..];
            arrays.push((entry.name, entry.shape, data));
        }
        if !bytes.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(ArrayFile { meta: header.meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    schema_version: u32,
    arch: Arch,
    mode: Mode,
}

impl<T: Real> ModelState<T> {
    pub fn to_array_file(&self) -> ArrayFile {
        let meta = ModelMeta {
            schema_version: MODEL_SCHEMA_VERSION,
            arch: self.arch.clone(),
            mode: self.mode(),
        };
        let mut file = ArrayFile {
            meta: serde_json::to_value(meta).expect("model metadata serializes"),
            arrays: Vec::new(),
        };
        for p in self.params() {
            file.push(p.name.clone(), p.tensor.shape().to_vec(), &p.tensor.data());
        }
        for (name, values) in self.buffers() {
            let n = values.len();
            file.push(name, vec![n], &values);
        }
        file
    }

    /// Rebuilds a network from a container, validating every array against
    /// the architecture it declares.
    pub fn from_array_file(file: &ArrayFile) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(file.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        if meta.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported model schema version {}",
                meta.schema_version
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let model = ModelState::<T>::build(meta.arch, 0.0, &mut rng)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .arch
            .layers()
            .iter()
            .flat_map(|l| {
                let mut v = l.param_shapes();
                v.extend(l.buffer_shapes());
                v
            })
            .collect();
        if expected.len() != file.arrays.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, found {}",
                expected.len(),
                file.arrays.len()
            )));
        }
        let params = model.params();
        for (name, shape) in &expected {
            let (found_shape, data) = file
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if found_shape != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "array {name} has shape {found_shape:?}, architecture expects {shape:?}"
                )));
            }
            let values: Vec<T> = data.iter().map(|&v| T::from_f32(v).unwrap()).collect();
            match params.iter().find(|p| &p.name == name) {
                Some(p) => p.tensor.set_data(&values),
                None => model.set_buffer(name, &values)?,
            }
        }
        model.set_mode(meta.mode);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_array_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_array_file(&ArrayFile::load(path)?)
    }
}
