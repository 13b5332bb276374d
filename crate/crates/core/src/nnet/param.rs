use serde::{Deserialize, Serialize};

/// A trainable block of parameters with its Adagrad accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Vec<f64>,
    pub accum: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let accum = vec![0.0; value.len()];
        Self { value, accum }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Total number of scalars across parameter blocks.
pub fn flat_len(blocks: &[(String, &Param)]) -> usize {
    blocks.iter().map(|(_, p)| p.len()).sum()
}

/// Reads the scalar at a flat index across blocks, with the owning block name.
pub fn flat_get(blocks: &[(String, &Param)], mut index: usize) -> Option<(String, f64)> {
    for (name, p) in blocks {
        if index < p.len() {
            return Some((format!("{name}[{index}]"), p.value[index]));
        }
        index -= p.len();
    }
    None
}

pub fn flat_set(blocks: &mut [(String, &mut Param)], mut index: usize, v: f64) -> bool {
    for (_, p) in blocks.iter_mut() {
        if index < p.len() {
            p.value[index] = v;
            return true;
        }
        index -= p.len();
    }
    false
}
