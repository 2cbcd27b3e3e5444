use std::collections::HashMap;

use rand::Rng;

use crate::nn::optim::round_f32;
use crate::tensor::Mat;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    /// Glorot-uniform weight matrix, values rounded to `f32`.
    pub fn push_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_fn(fan_in, fan_out, |_, _| round_f32(rng.random_range(-limit..limit)));
        self.push(name, w)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &Mat {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.values[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}
