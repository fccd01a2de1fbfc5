//! Named parameter tensors and matching gradient buffers.

use serde::{Deserialize, Serialize};

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.into(), shape, data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Rounds to the nearest `f32` so that checkpoints store values exactly.
pub fn snap(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.tensors.push(Tensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn snap_all(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = snap(*x));
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients { data: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn global_norm(&self) -> f64 {
        self.data.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}
