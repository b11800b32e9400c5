//! Named parameter registry with paired gradient buffers.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One named parameter tensor and its gradient buffer of identical shape.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered map of named parameters. Registration order is the canonical
/// order for initialization, optimizer state, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    /// Register a zero-initialized parameter. Names must be unique.
    pub fn register(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn entry_at(&self, index: usize) -> &ParamEntry {
        &self.entries[index]
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = Tensor::zeros(e.value.shape());
        }
    }

    /// Add `deltas` (aligned with registration order) into the grad buffers.
    pub fn accumulate_grads(&mut self, deltas: &[Tensor]) -> Result<()> {
        if deltas.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "gradient set has {} tensors, model has {}",
                deltas.len(),
                self.entries.len()
            )));
        }
        for (e, d) in self.entries.iter_mut().zip(deltas) {
            e.grad = e.grad.add(d)?;
        }
        Ok(())
    }

    /// Zero tensors shaped like every parameter, in registration order.
    pub fn grad_template(&self) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|e| Tensor::zeros(e.value.shape()))
            .collect()
    }

    /// SHA-256 digest over names, shapes, and values. Gradients excluded, so
    /// the digest identifies the weights themselves (frozen-model checks).
    pub fn value_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.name.as_bytes());
            hasher.update([0u8]);
            for &d in e.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut p = ModelParams::new();
        p.register("layer.weight", &[4, 3]).unwrap();
        p.register("layer.bias", &[4]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.value("layer.weight").unwrap().shape(), &[4, 3]);
        assert!(p.value("missing").is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::new();
        p.register("w", &[2]).unwrap();
        assert!(p.register("w", &[2]).is_err());
    }

    #[test]
    fn grads_match_value_shapes() {
        let mut p = ModelParams::new();
        p.register("w", &[2, 5]).unwrap();
        for e in p.entries() {
            assert_eq!(e.value.shape(), e.grad.shape());
        }
    }

    #[test]
    fn digest_changes_with_values() {
        let mut p = ModelParams::new();
        p.register("w", &[3]).unwrap();
        let d0 = p.value_digest();
        p.entries_mut()[0].value.data_mut()[1] = 7.0;
        assert_ne!(d0, p.value_digest());
        // Gradient changes leave the digest alone.
        let d1 = p.value_digest();
        p.entries_mut()[0].grad.data_mut()[0] = 1.0;
        assert_eq!(d1, p.value_digest());
    }
}
