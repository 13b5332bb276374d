use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adagrad, Param};
use crate::error::{Error, Result};
use crate::rng::{mix, stream};

/// Feature id for `value` within a named feature namespace.
pub fn hash_feature(namespace: &str, value: u64) -> u64 {
    mix(&[stream(namespace), value])
}

/// Hashed embedding table: a feature id maps to row `hash(id, seed) mod buckets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    num_buckets: usize,
    dim: usize,
    hash_seed: u64,
    pub param: Param,
}

impl EmbeddingTable {
    /// Rows drawn uniformly from `[-init_scale, init_scale]`.
    pub fn new<R: Rng>(
        num_buckets: usize,
        dim: usize,
        hash_seed: u64,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !num_buckets.is_power_of_two() {
            return Err(Error::config(
                "num_buckets",
                format!("must be a power of two, got {num_buckets}"),
            ));
        }
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        let values = (0..num_buckets * dim)
            .map(|_| rng.random_range(-init_scale..=init_scale))
            .collect();
        Ok(Self {
            num_buckets,
            dim,
            hash_seed,
            param: Param::new(values),
        })
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    #[inline]
    pub fn bucket(&self, feature: u64) -> usize {
        (mix(&[self.hash_seed, feature]) as usize) & (self.num_buckets - 1)
    }

    #[inline]
    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.param.value[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn row_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.param.value[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn lookup(&self, feature: u64) -> &[f64] {
        self.row(self.bucket(feature))
    }

    /// Sparse Adagrad over the rows present in `grad`.
    pub fn apply_adagrad(
        &mut self,
        name: &str,
        grad: &SparseRowGrad,
        opt: &Adagrad,
        scale: f64,
    ) -> Result<()> {
        if grad.dim != self.dim {
            return Err(Error::ShapeMismatch {
                context: format!("embedding {name} gradient width"),
                expected: self.dim,
                actual: grad.dim,
            });
        }
        if grad.rows.values().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let d = self.dim;
        for (&row, g) in &grad.rows {
            let range = row * d..(row + 1) * d;
            opt.step(
                name,
                &mut self.param.value[range.clone()],
                g,
                &mut self.param.accum[range],
                scale,
            )?;
        }
        Ok(())
    }
}

/// Row-sparse gradient for an embedding table or codebook.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRowGrad {
    pub dim: usize,
    pub rows: HashMap<usize, Vec<f64>>,
}

impl SparseRowGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.dim);
        let acc = self
            .rows
            .entry(row)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (a, g) in acc.iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn add_scaled(&mut self, row: usize, grad: &[f64], scale: f64) {
        let acc = self
            .rows
            .entry(row)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (a, g) in acc.iter_mut().zip(grad) {
            *a += scale * g;
        }
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Dense copy with `num_rows` rows, for gradient checking.
    pub fn to_dense(&self, num_rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_rows * self.dim];
        for (&r, g) in &self.rows {
            out[r * self.dim..(r + 1) * self.dim].copy_from_slice(g);
        }
        out
    }
}

/// Embedding row for a feature id.
pub fn hash_embed(feature: u64, table: &EmbeddingTable) -> Vec<f64> {
    table.lookup(feature).to_vec()
}
