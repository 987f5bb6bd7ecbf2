//! Named parameter storage, deterministic initialization and the `GDE1`
//! weight file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GDE1" | u32 version = 1 | u64 header_len | header (UTF-8 JSON) | f32 payload | u32 CRC32(payload)
//! ```
//!
//! The header maps every parameter name to `{dtype, shape, offset, length}`
//! (byte offsets into the payload) and carries `{seed, config_digest}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, LoadError, Result};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"GDE1";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Param {
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_parts(self.shape.clone(), self.values.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, Param>,
    pub metadata: Metadata,
}

impl WeightStore {
    pub fn new(metadata: Metadata) -> Self {
        Self { params: BTreeMap::new(), metadata }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(
            name,
            Param { dtype: DType::F32, shape: tensor.shape().to_vec(), values: tensor.data().to_vec() },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor<f32>> {
        self.get(name).map(Param::to_tensor).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = BTreeMap::new();
        let mut offset = 0u64;
        for (name, p) in &self.params {
            let length = (p.values.len() * 4) as u64;
            tensors.insert(
                name.clone(),
                HeaderEntry { dtype: p.dtype, shape: p.shape.clone(), offset, length },
            );
            offset += length;
        }
        let header = Header { metadata: self.metadata.clone(), tensors };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut payload = Vec::with_capacity(offset as usize);
        for p in self.params.values() {
            for v in &p.values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LoadError> {
        let truncated = |needed: usize| LoadError::Truncated { needed: needed as u64, found: bytes.len() as u64 };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        if &bytes[..4] != MAGIC {
            return Err(LoadError::BadMagic { found: bytes[..4].to_vec() });
        }
        if bytes.len() < PREAMBLE {
            return Err(truncated(PREAMBLE));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(LoadError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .ok_or_else(|| LoadError::Header(format!("header length {header_len} overflows")))?;
        if bytes.len() < header_end {
            return Err(truncated(header_end));
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| LoadError::Header(e.to_string()))?;

        let mut expected_offset = 0u64;
        for (name, entry) in &header.tensors {
            if entry.dtype != DType::F32 {
                return Err(LoadError::Header(format!("`{name}` has unsupported dtype {}", entry.dtype)));
            }
            let numel: usize = entry.shape.iter().product();
            if entry.shape.iter().any(|&d| d == 0) || entry.length != numel as u64 * 4 {
                return Err(LoadError::Header(format!(
                    "`{name}`: shape {:?} does not match {} bytes",
                    entry.shape, entry.length
                )));
            }
            if entry.offset != expected_offset {
                return Err(LoadError::Header(format!("`{name}` at offset {} but expected {expected_offset}", entry.offset)));
            }
            expected_offset += entry.length;
        }
        let payload_len = expected_offset as usize;
        let total = header_end + payload_len + 4;
        if bytes.len() < total {
            return Err(truncated(total));
        }
        if bytes.len() > total {
            return Err(LoadError::Header(format!("{} trailing bytes after checksum", bytes.len() - total)));
        }
        let payload = &bytes[header_end..header_end + payload_len];
        let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(LoadError::Checksum { stored, computed });
        }

        let mut params = BTreeMap::new();
        for (name, entry) in header.tensors {
            let start = entry.offset as usize;
            let raw = &payload[start..start + entry.length as usize];
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(name, Param { dtype: entry.dtype, shape: entry.shape, values });
        }
        Ok(Self { params, metadata: header.metadata })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: Metadata,
    tensors: BTreeMap<String, HeaderEntry>,
}

pub fn save_weights(ws: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ws.to_bytes()).map_err(|source| Error::File { path: path.display().to_string(), source })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::File { path: path.display().to_string(), source })?;
    Ok(WeightStore::from_bytes(&bytes)?)
}

/// How a freshly initialized parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    /// Normalization scales.
    Ones,
}

impl Init {
    pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Supplies parameters by name. Model weight structs are built against this
/// trait so initialization and loading share one parameter layout.
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<f32>>;
}

/// Deterministic generator for parameter `name` under `seed`. Each name gets
/// its own ChaCha stream, so adding or removing parameters never changes the
/// values of the others.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"gde-param\0");
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Generates parameters and records them into a [`WeightStore`].
pub struct Initializer {
    seed: u64,
    store: WeightStore,
    inits: BTreeMap<String, Init>,
}

impl Initializer {
    pub fn new(seed: u64, config_digest: String) -> Self {
        Self { seed, store: WeightStore::new(Metadata { seed, config_digest }), inits: BTreeMap::new() }
    }

    pub fn finish(self) -> WeightStore {
        self.store
    }

    /// The init rule used for each parameter so far.
    pub fn inits(&self) -> &BTreeMap<String, Init> {
        &self.inits
    }
}

impl ParamSource for Initializer {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<f32>> {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape.to_vec())?,
            Init::Ones => Tensor::full(shape.to_vec(), 1.0)?,
            Init::Xavier { fan_in, fan_out } => {
                let bound = Init::xavier_bound(fan_in, fan_out) as f32;
                let mut rng = param_rng(self.seed, name);
                Tensor::from_fn(shape.to_vec(), |_| (2.0 * rng.random::<f32>() - 1.0) * bound)?
            }
        };
        self.store.insert(name, &t)?;
        self.inits.insert(name.to_string(), init);
        Ok(t)
    }
}

/// Reads parameters back out of a store, checking shapes.
pub struct StoreReader<'a> {
    store: &'a WeightStore,
}

impl<'a> StoreReader<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        Self { store }
    }
}

impl ParamSource for StoreReader<'_> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor<f32>> {
        let p = self.store.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.shape != shape {
            return Err(Error::Dimension(format!("parameter `{name}` has shape {:?}, expected {shape:?}", p.shape)));
        }
        Ok(p.to_tensor())
    }
}
