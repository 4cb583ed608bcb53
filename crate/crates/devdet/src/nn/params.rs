//! Flat named parameter vector. Values are held as f64 for numerics but are
//! always kept f32-representable (quantized after init and after every
//! optimizer step) so checkpoints round-trip bit-exactly.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct ParamVec {
    specs: Vec<TensorSpec>,
    pub data: Vec<f64>,
}

impl ParamVec {
    pub fn new() -> Self {
        ParamVec { specs: Vec::new(), data: Vec::new() }
    }

    /// Register a tensor and return its index.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> usize {
        let offset = self.data.len();
        let numel: usize = shape.iter().product();
        self.specs.push(TensorSpec { name: name.to_string(), shape: shape.to_vec(), offset });
        self.data.resize(offset + numel, 0.0);
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let s = self.spec(name);
        &self.data[s.offset..s.offset + s.numel()]
    }

    pub fn spec(&self, name: &str) -> &TensorSpec {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("unknown tensor `{name}`"))
    }

    /// Snap every value to the nearest f32.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Zero-filled gradient buffer of the same layout.
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// SHA-256 over the f32 little-endian byte image of the values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update((*v as f32).to_le_bytes());
        }
        hex_string(&h.finalize())
    }

    pub fn check_layout(&self, other: &ParamVec) -> Result<()> {
        if self.specs != other.specs {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        Ok(())
    }
}

impl Default for ParamVec {
    fn default() -> Self {
        Self::new()
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
