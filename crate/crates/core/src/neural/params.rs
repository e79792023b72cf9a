use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{uniform, StreamRng};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// `rows x cols` matrix drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut StreamRng) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let values = (0..rows * cols).map(|_| T::lit(uniform(rng, -bound, bound))).collect();
        self.add(name, Tensor::from_rows(rows, cols, values))
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Tensor::full(rows, cols, T::lit(v)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Serializable name-keyed view.
    pub fn to_named(&self) -> BTreeMap<String, NamedTensor<T>> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, t)| (n.clone(), NamedTensor { shape: t.shape().to_vec(), values: t.values().to_vec() }))
            .collect()
    }

    /// Overwrites every parameter from a name-keyed map; names and shapes
    /// must match this store exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, NamedTensor<T>>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", self.len(), named.len())));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let nt = named.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if nt.shape != value.shape() {
                return Err(Error::Checkpoint(format!("tensor {name}: shape {:?} vs {:?}", nt.shape, value.shape())));
            }
            *value = Tensor::new(nt.shape.clone(), nt.values.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(num_params: usize) -> Self {
        Self { grads: (0..num_params).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` in place. Callers fold in a fixed order to keep sums
    /// bit-reproducible.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.values_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.values())
            .fold(T::zero(), |s, v| s + *v * *v)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}

/// On-disk model file: version, free-form hyperparameters and named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyperparameters: serde_json::Value,
    pub parameters: BTreeMap<String, NamedTensor<f64>>,
}

impl Checkpoint {
    pub fn new(hyperparameters: serde_json::Value, params: &ParamStore<f64>) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, hyperparameters, parameters: params.to_named() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported format_version {v}"))),
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let mut rng = stream(3, Purpose::Init);
        let mut store = ParamStore::<f64>::new();
        store.add_uniform("w", 3, 4, 3, &mut rng);
        store.add_const("g", 1, 4, 1.0);
        let ck = Checkpoint::new(serde_json::json!({"d": 4}), &store);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut other = ParamStore::<f64>::new();
        other.add_const("w", 3, 4, 0.0);
        other.add_const("g", 1, 4, 0.0);
        other.load_named(&back.parameters).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn rejects_unknown_version_and_mismatched_shapes() {
        let store = ParamStore::<f64>::new();
        let mut ck = Checkpoint::new(serde_json::json!({}), &store);
        ck.format_version = 9;
        assert!(matches!(Checkpoint::from_json(&ck.to_json().unwrap()), Err(Error::Checkpoint(_))));

        let mut a = ParamStore::<f64>::new();
        a.add_const("w", 2, 2, 0.0);
        let mut b = ParamStore::<f64>::new();
        b.add_const("w", 2, 3, 0.0);
        assert!(b.load_named(&a.to_named()).is_err());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = stream(5, Purpose::Init);
        let mut store = ParamStore::<f64>::new();
        let id = store.add_uniform("w", 16, 16, 16, &mut rng);
        assert!(store.get(id).values().iter().all(|v| v.abs() <= 0.25));
    }
}
