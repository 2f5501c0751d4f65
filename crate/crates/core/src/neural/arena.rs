//! Flat parameter storage. All tensors of a model half live in one `Vec<f64>`
//! addressed by named specs, so the optimizer, checkpointing, checksums and
//! finite-difference probing all see the same contiguous view.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::util::Fnv1a64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Arena {
    pub data: Vec<f64>,
    specs: Vec<TensorSpec>,
    index: HashMap<String, usize>,
}

impl Arena {
    pub fn builder() -> ArenaBuilder {
        ArenaBuilder { specs: Vec::new(), total: 0 }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Result<&TensorSpec> {
        self.index
            .get(name)
            .map(|&i| &self.specs[i])
            .ok_or_else(|| Error::Invalid(format!("unknown tensor {name:?}")))
    }

    pub fn view(&self, name: &str) -> &[f64] {
        let spec = self.spec(name).expect("tensor name");
        &self.data[spec.offset..spec.offset + spec.len()]
    }

    pub fn view_mut(&mut self, name: &str) -> &mut [f64] {
        let spec = self.spec(name).expect("tensor name").clone();
        &mut self.data[spec.offset..spec.offset + spec.len()]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same specs, all-zero data — gradient accumulators.
    pub fn zeros_like(&self) -> Arena {
        Arena {
            data: vec![0.0; self.data.len()],
            specs: self.specs.clone(),
            index: self.index.clone(),
        }
    }

    /// FNV-1a over the little-endian bytes of every value, in order.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a64::new();
        for v in &self.data {
            h.update(&v.to_le_bytes());
        }
        h.finish()
    }

    /// Element-wise accumulate (gradient reduction). Lengths must match.
    pub fn add_assign(&mut self, other: &Arena) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

pub struct ArenaBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl ArenaBuilder {
    pub fn tensor(mut self, name: impl Into<String>, shape: &[usize]) -> Self {
        let name = name.into();
        debug_assert!(
            !self.specs.iter().any(|s| s.name == name),
            "duplicate tensor {name}"
        );
        let len: usize = shape.iter().product();
        self.specs.push(TensorSpec {
            name,
            offset: self.total,
            shape: shape.to_vec(),
        });
        self.total += len;
        self
    }

    pub fn build(self) -> Arena {
        let index = self
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Arena {
            data: vec![0.0; self.total],
            specs: self.specs,
            index,
        }
    }
}
