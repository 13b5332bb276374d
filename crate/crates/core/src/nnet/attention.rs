//! Single-head scaled dot-product attention pooling over a behavior
//! sequence, with the query projected from a target embedding.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dot, Adagrad, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPool {
    pub dim: usize,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub q_bias: Param,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
    /// True when the sequence was empty and the output is the zero vector.
    pub cold_start: bool,
    target: Vec<f64>,
    items: Vec<Vec<f64>>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub q_bias: Vec<f64>,
}

impl AttentionGrads {
    pub fn zeros_like(p: &AttentionPool) -> Self {
        let dd = p.dim * p.dim;
        Self {
            wq: vec![0.0; dd],
            wk: vec![0.0; dd],
            wv: vec![0.0; dd],
            q_bias: vec![0.0; p.dim],
        }
    }

    pub fn clear(&mut self) {
        for v in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.q_bias] {
            v.fill(0.0);
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for v in [&self.wq, &self.wk, &self.wv, &self.q_bias] {
            out.extend_from_slice(v);
        }
    }
}

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..m.len() / d).map(|o| dot(&m[o * d..(o + 1) * d], x)).collect()
}

/// `out += m^T y` and `gm += y x^T` in one sweep.
fn matvec_t_acc(m: &[f64], y: &[f64], x: &[f64], out: &mut [f64], gm: &mut [f64]) {
    let d = x.len();
    for (o, &yo) in y.iter().enumerate() {
        if yo == 0.0 {
            continue;
        }
        for i in 0..d {
            out[i] += m[o * d + i] * yo;
            gm[o * d + i] += yo * x[i];
        }
    }
}

impl AttentionPool {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut mat = || Param::new((0..dim * dim).map(|_| normal.sample(rng)).collect());
        Self {
            dim,
            wq: mat(),
            wk: mat(),
            wv: mat(),
            q_bias: Param::zeros(dim),
        }
    }

    pub fn forward(&self, target: &[f64], sequence: &[&[f64]]) -> Result<AttentionCache> {
        let d = self.dim;
        if target.len() != d {
            return Err(Error::ShapeMismatch {
                context: "attention target".into(),
                expected: d,
                actual: target.len(),
            });
        }
        if let Some(bad) = sequence.iter().find(|x| x.len() != d) {
            return Err(Error::ShapeMismatch {
                context: "attention sequence item".into(),
                expected: d,
                actual: bad.len(),
            });
        }
        let mut q = matvec(&self.wq.value, target);
        for (qi, b) in q.iter_mut().zip(&self.q_bias.value) {
            *qi += b;
        }
        if sequence.is_empty() {
            return Ok(AttentionCache {
                output: vec![0.0; d],
                weights: Vec::new(),
                cold_start: true,
                target: target.to_vec(),
                items: Vec::new(),
                q,
                keys: Vec::new(),
                values: Vec::new(),
            });
        }
        let scale = 1.0 / (d as f64).sqrt();
        let keys: Vec<Vec<f64>> = sequence.iter().map(|x| matvec(&self.wk.value, x)).collect();
        let values: Vec<Vec<f64>> = sequence.iter().map(|x| matvec(&self.wv.value, x)).collect();
        let logits: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut output = vec![0.0; d];
        for (w, v) in weights.iter().zip(&values) {
            for (o, vi) in output.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attention pooling output".into()));
        }
        Ok(AttentionCache {
            output,
            weights,
            cold_start: false,
            target: target.to_vec(),
            items: sequence.iter().map(|x| x.to_vec()).collect(),
            q,
            keys,
            values,
        })
    }

    /// Accumulates parameter gradients; returns `(d_target, d_items)`.
    pub fn backward_into(
        &self,
        cache: &AttentionCache,
        g: &[f64],
        grads: &mut AttentionGrads,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = self.dim;
        if g.len() != d {
            return Err(Error::ShapeMismatch {
                context: "attention upstream".into(),
                expected: d,
                actual: g.len(),
            });
        }
        let mut d_target = vec![0.0; d];
        if cache.cold_start {
            return Ok((d_target, Vec::new()));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let n = cache.items.len();
        let mut d_items = vec![vec![0.0; d]; n];

        let dw: Vec<f64> = cache.values.iter().map(|v| dot(g, v)).collect();
        let mean_dw: f64 = cache.weights.iter().zip(&dw).map(|(w, x)| w * x).sum();
        let mut dq = vec![0.0; d];
        for i in 0..n {
            let w = cache.weights[i];
            let dv: Vec<f64> = g.iter().map(|gi| w * gi).collect();
            matvec_t_acc(&self.wv.value, &dv, &cache.items[i], &mut d_items[i], &mut grads.wv);

            let da = w * (dw[i] - mean_dw) * scale;
            for (dqj, kj) in dq.iter_mut().zip(&cache.keys[i]) {
                *dqj += da * kj;
            }
            let dk: Vec<f64> = cache.q.iter().map(|qj| da * qj).collect();
            matvec_t_acc(&self.wk.value, &dk, &cache.items[i], &mut d_items[i], &mut grads.wk);
        }
        for (b, x) in grads.q_bias.iter_mut().zip(&dq) {
            *b += x;
        }
        matvec_t_acc(&self.wq.value, &dq, &cache.target, &mut d_target, &mut grads.wq);
        Ok((d_target, d_items))
    }

    pub fn apply_adagrad(&mut self, name: &str, g: &AttentionGrads, opt: &Adagrad, scale: f64) -> Result<()> {
        opt.step(&format!("{name}.wq"), &mut self.wq.value, &g.wq, &mut self.wq.accum, scale)?;
        opt.step(&format!("{name}.wk"), &mut self.wk.value, &g.wk, &mut self.wk.accum, scale)?;
        opt.step(&format!("{name}.wv"), &mut self.wv.value, &g.wv, &mut self.wv.accum, scale)?;
        opt.step(&format!("{name}.q_bias"), &mut self.q_bias.value, &g.q_bias, &mut self.q_bias.accum, scale)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.q_bias"), &self.q_bias));
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.q_bias"), &mut self.q_bias));
    }
}
