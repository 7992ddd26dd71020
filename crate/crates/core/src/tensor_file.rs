//! Named-tensor container used for models, images, textures, dictionaries
//! and datasets.
//!
//! Layout: one line of UTF-8 JSON
//! `{"tensors":[{"name":…,"dtype":"f32"|"i32","shape":[…]},…], "meta": {…}}`,
//! a `\n`, then every tensor's little-endian payload in declared order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RgbGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorData::F32(data),
        }
    }

    /// Stores `f64` values as `f32`.
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self::f32(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn i32(name: impl Into<String>, shape: Vec<usize>, data: Vec<i32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorData::I32(data),
        }
    }

    pub fn from_grid(name: impl Into<String>, grid: &RgbGrid) -> Self {
        Self::from_f64(name, vec![grid.height(), grid.width(), 3], grid.as_slice())
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            TensorData::I32(_) => Err(Error::Format(format!("tensor {} is not f32", self.name))),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Format(format!("tensor {} is not i32", self.name))),
        }
    }

    pub fn to_grid(&self) -> Result<RgbGrid> {
        match self.shape.as_slice() {
            [h, w, 3] => RgbGrid::from_vec(*h, *w, self.to_f64()?),
            _ => Err(Error::Format(format!(
                "tensor {} has shape {:?}, expected [h, w, 3]",
                self.name, self.shape
            ))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    tensors: Vec<TensorHeader>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// An ordered collection of named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<Tensor>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: Tensor) -> &mut Self {
        self.tensors.push(tensor);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FileHeader {
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    dtype: t.dtype(),
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for t in &self.tensors {
            let n = match &t.data {
                TensorData::F32(v) => {
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                    v.len()
                }
                TensorData::I32(v) => {
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                    v.len()
                }
            };
            if n != t.numel() {
                return Err(Error::Format(format!(
                    "tensor {} holds {n} values but shape {:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let header: FileHeader = serde_json::from_slice(&bytes[..nl])?;
        let mut offset = nl + 1;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for h in header.tensors {
            let numel: usize = h.shape.iter().product();
            let end = offset + numel * 4;
            if end > bytes.len() {
                return Err(Error::Format(format!("tensor {} truncated", h.name)));
            }
            let chunk = &bytes[offset..end];
            let data = match h.dtype {
                DType::F32 => TensorData::F32(
                    chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                ),
                DType::I32 => TensorData::I32(
                    chunk
                        .chunks_exact(4)
                        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                ),
            };
            tensors.push(Tensor {
                name: h.name,
                shape: h.shape,
                data,
            });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - offset
            )));
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
