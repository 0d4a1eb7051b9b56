//! Named parameter store, Adam optimizer state and checkpoint files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
    moments: Moments,
}

/// All trainable tensors of a model plus their Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    entries: Vec<Entry>,
    step: u64,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let n = tensor.len();
        self.entries.push(Entry {
            name: name.into(),
            tensor,
            trainable: true,
            moments: Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
            },
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.entries[id.0].tensor.data()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Adds `scale * grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &ParamGrads, scale: f64) {
        for (e, g) in self.entries.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                let buf = e.tensor.grad_mut();
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += scale * v;
                }
            }
        }
    }

    /// Clears the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.moments.first.iter_mut().for_each(|v| *v = 0.0);
            e.moments.second.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// One bias-corrected Adam update over the trainable parameters.
    ///
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for e in &self.entries {
            if let Some(g) = e.tensor.grad() {
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of '{}' at index {bad}",
                        e.name
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            if !e.trainable {
                continue;
            }
            let n = e.tensor.len();
            let grad = match e.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; n],
            };
            let Moments { first, second } = &mut e.moments;
            let data = e.tensor.data_mut();
            for k in 0..n {
                let g = grad[k];
                first[k] = cfg.beta1 * first[k] + (1.0 - cfg.beta1) * g;
                second[k] = cfg.beta2 * second[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = first[k] / bias1;
                let v_hat = second[k] / bias2;
                data[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step: self.step,
            tensors: self
                .entries
                .iter()
                .map(|e| CheckpointTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    data: e.tensor.data().to_vec(),
                    adam_first: e.moments.first.clone(),
                    adam_second: e.moments.second.clone(),
                })
                .collect(),
        }
    }

    /// Overwrites values and optimizer state from a checkpoint whose tensor
    /// names and shapes match this store exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.validate()?;
        if ckpt.tensors.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                ckpt.tensors.len(),
                self.entries.len()
            )));
        }
        for (e, t) in self.entries.iter().zip(&ckpt.tensors) {
            if e.name != t.name || e.tensor.shape() != t.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: model '{}' {:?}, checkpoint '{}' {:?}",
                    e.name,
                    e.tensor.shape(),
                    t.name,
                    t.shape
                )));
            }
        }
        for (e, t) in self.entries.iter_mut().zip(&ckpt.tensors) {
            e.tensor.data_mut().copy_from_slice(&t.data);
            e.moments.first.clone_from(&t.adam_first);
            e.moments.second.clone_from(&t.adam_second);
        }
        self.step = ckpt.step;
        Ok(())
    }
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrads(pub(crate) Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if let Some(theirs) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                    None => *mine = Some(theirs.clone()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "blescope-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub adam_first: Vec<f64>,
    pub adam_second: Vec<f64>,
}

/// Versioned JSON snapshot of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format '{}'",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if t.data.len() != n || t.adam_first.len() != n || t.adam_second.len() != n {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has inconsistent length",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> (ModelParams, ParamId) {
        let mut p = ModelParams::new();
        let id = p.add("w", Tensor::vector(values.to_vec()));
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let (mut p, id) = store(&[1.0, -2.0]);
        p.tensor_mut(id).grad_mut();
        p.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.value(id), &[1.0, -2.0]);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
        let (mut p, id) = store(&[0.0, 0.0]);
        p.tensor_mut(id).grad_mut().copy_from_slice(&[0.3, -2.0]);
        let cfg = AdamConfig::with_lr(1e-3);
        p.adam_step(&cfg).unwrap();
        let expected = [-1e-3 * 0.3 / (0.3 + 1e-8), 1e-3 * 2.0 / (2.0 + 1e-8)];
        for (v, e) in p.value(id).iter().zip(expected) {
            assert!((v - e).abs() < 1e-15, "{v} vs {e}");
        }
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let (mut p, id) = store(&[1.0]);
        p.tensor_mut(id).grad_mut()[0] = f64::NAN;
        assert!(matches!(
            p.adam_step(&AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p.value(id), &[1.0]);
        assert_eq!(p.step(), 0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let (mut p, id) = store(&[1.0]);
        p.set_trainable(id, false);
        p.tensor_mut(id).grad_mut()[0] = 5.0;
        p.adam_step(&AdamConfig::with_lr(0.5)).unwrap();
        assert_eq!(p.value(id), &[1.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = ModelParams::new();
        let vals = vec![0.1, -1.0 / 3.0, 1e-300, -0.0, std::f64::consts::PI, 5e-324];
        let id = p.add("a", Tensor::vector(vals.clone()));
        p.tensor_mut(id)
            .grad_mut()
            .copy_from_slice(&[0.7, 0.2, -0.1, 1.0, 2.0, 3.0]);
        p.adam_step(&AdamConfig::with_lr(1e-2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        p.to_checkpoint().save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, p.to_checkpoint());
        let mut q = ModelParams::new();
        q.add("a", Tensor::vector(vec![0.0; vals.len()]));
        q.load_checkpoint(&loaded).unwrap();
        for (a, b) in q.value(id).iter().zip(p.value(id)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(q.step(), 1);
    }

    #[test]
    fn checkpoint_rejects_mismatched_model() {
        let (p, _) = store(&[1.0, 2.0]);
        let mut q = ModelParams::new();
        q.add("w", Tensor::vector(vec![0.0; 3]));
        assert!(q.load_checkpoint(&p.to_checkpoint()).is_err());
        let mut bad = p.to_checkpoint();
        bad.version = 99;
        assert!(q.load_checkpoint(&bad).is_err());
    }
}
