//! The `HSTE` tensor container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HSTE"
//! 4       4     version, u32 little-endian (1)
//! 8       8     manifest length M, u64 little-endian
//! 16      M     manifest, UTF-8 JSON
//! 16+M    4     CRC-32 (IEEE) of the blob, u32 little-endian
//! 20+M    ...   blob: tensors as raw little-endian values
//! ```
//!
//! The manifest repeats the blob checksum and length; both copies must
//! agree with the blob. Tensor descriptors give byte offsets into the blob
//! and may not overlap.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, RuntimeError};
use crate::layers::LayerSpec;

pub const MAGIC: &[u8; 4] = b"HSTE";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Model,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDesc {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

impl TensorDesc {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ContainerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorDesc>,
    pub blob_length: u64,
    pub crc32: u32,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    blob: Vec<u8>,
}

impl Container {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(RuntimeError::Format("missing HSTE magic".into()));
        }
        if bytes.len() < HEADER {
            return Err(RuntimeError::Corrupt("header truncated".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(RuntimeError::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let rest = (bytes.len() - HEADER) as u64;
        if manifest_len > rest || rest - manifest_len < 4 {
            return Err(RuntimeError::Corrupt("manifest truncated".into()));
        }
        let manifest_end = HEADER + manifest_len as usize;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER..manifest_end])
            .map_err(|e| RuntimeError::Format(format!("manifest: {e}")))?;
        let stored_crc =
            u32::from_le_bytes(bytes[manifest_end..manifest_end + 4].try_into().unwrap());
        let blob = &bytes[manifest_end + 4..];
        if blob.len() as u64 != manifest.blob_length {
            return Err(RuntimeError::Corrupt(format!(
                "blob is {} bytes, manifest declares {}",
                blob.len(),
                manifest.blob_length
            )));
        }
        let crc = crc32fast::hash(blob);
        if crc != stored_crc || crc != manifest.crc32 {
            return Err(RuntimeError::Corrupt(format!(
                "checksum mismatch: blob {crc:08x}, envelope {stored_crc:08x}, manifest {:08x}",
                manifest.crc32
            )));
        }
        validate_descriptors(&manifest.tensors, manifest.blob_length)?;
        Ok(Self {
            manifest,
            blob: blob.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER + json.len() + 4 + self.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.manifest.crc32.to_le_bytes());
        out.extend_from_slice(&self.blob);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| RuntimeError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn blob(&self) -> &[u8] {
        &self.blob
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorDesc> {
        self.manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| RuntimeError::validation(format!("tensor {name:?} not found")))
    }

    fn bytes_of(&self, desc: &TensorDesc, dtype: DType) -> Result<&[u8]> {
        if desc.dtype != dtype {
            return Err(RuntimeError::validation(format!(
                "tensor {:?} has dtype {:?}, expected {dtype:?}",
                desc.name, desc.dtype
            )));
        }
        Ok(&self.blob[desc.offset as usize..(desc.offset + desc.length) as usize])
    }

    pub fn f32_tensor(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let desc = self.tensor(name)?;
        let data = self
            .bytes_of(desc, DType::F32)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((desc.shape.clone(), data))
    }

    pub fn i64_tensor(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        let desc = self.tensor(name)?;
        let data = self
            .bytes_of(desc, DType::I64)?
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((desc.shape.clone(), data))
    }
}

fn validate_descriptors(tensors: &[TensorDesc], blob_length: u64) -> Result<()> {
    let mut spans = Vec::with_capacity(tensors.len());
    for t in tensors {
        let expected = (t.numel() * t.dtype.size()) as u64;
        if t.length != expected {
            return Err(RuntimeError::Format(format!(
                "tensor {:?}: shape {:?} needs {expected} bytes, descriptor says {}",
                t.name, t.shape, t.length
            )));
        }
        let end = t.offset.checked_add(t.length).filter(|&e| e <= blob_length);
        let Some(end) = end else {
            return Err(RuntimeError::Format(format!(
                "tensor {:?} extends past the blob",
                t.name
            )));
        };
        spans.push((t.offset, end, t.name.as_str()));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(RuntimeError::Format(format!(
                "tensors {:?} and {:?} overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    let mut names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(RuntimeError::Format(format!(
            "duplicate tensor name {:?}",
            dup[0]
        )));
    }
    Ok(())
}

/// Assembles a container tensor by tensor.
#[derive(Debug)]
pub struct ContainerBuilder {
    kind: ContainerKind,
    input_shape: Option<Vec<usize>>,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorDesc>,
    meta: BTreeMap<String, Value>,
    blob: Vec<u8>,
}

impl ContainerBuilder {
    pub fn new(kind: ContainerKind) -> Self {
        Self {
            kind,
            input_shape: None,
            layers: Vec::new(),
            tensors: Vec::new(),
            meta: BTreeMap::new(),
            blob: Vec::new(),
        }
    }

    pub fn input_shape(mut self, shape: Vec<usize>) -> Self {
        self.input_shape = Some(shape);
        self
    }

    pub fn layer(mut self, layer: LayerSpec) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn meta(mut self, key: &str, value: Value) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    fn push(&mut self, name: &str, dtype: DType, shape: &[usize], bytes: Vec<u8>) {
        self.tensors.push(TensorDesc {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset: self.blob.len() as u64,
            length: bytes.len() as u64,
        });
        self.blob.extend_from_slice(&bytes);
    }

    pub fn f32_tensor(mut self, name: &str, shape: &[usize], data: &[f32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name}");
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(name, DType::F32, shape, bytes);
        self
    }

    pub fn i64_tensor(mut self, name: &str, shape: &[usize], data: &[i64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name}");
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(name, DType::I64, shape, bytes);
        self
    }

    pub fn finish(self) -> Container {
        Container {
            manifest: Manifest {
                kind: self.kind,
                input_shape: self.input_shape,
                layers: self.layers,
                tensors: self.tensors,
                blob_length: self.blob.len() as u64,
                crc32: crc32fast::hash(&self.blob),
                meta: self.meta,
            },
            blob: self.blob,
        }
    }
}
