use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tape::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named flat parameter arrays in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "parameter {name} shape");
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape, data });
    }

    /// Gaussian init with std `gain / sqrt(fan_in)`.
    pub fn init_normal(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, shape, data);
    }

    pub fn init_const(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![value; n]);
    }

    pub fn init_uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, shape, data);
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.get(name).map(|e| Tensor::new(e.shape.clone(), e.data.clone()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// A zero-filled store with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.shape.clone(), vec![0.0; e.data.len()]);
        }
        out
    }

    /// Rounds every value to the nearest f32 so checkpoints restore exactly.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}
