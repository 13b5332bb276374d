//! Codebook embedding of a quantized CTR, with a piecewise-linear surrogate
//! used to pass a gradient back to the CTR itself.
//!
//! The forward value during training and serving is exactly the codebook
//! row of the active code. The surrogate interpolates between rows `lo` and
//! `lo + 1` at the continuous code position, where `lo = min(floor(u), k-2)`.
//! It agrees with the quantized forward at integer positions, and its
//! derivative in p is `(e[lo+1] - e[lo]) * du/dp`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quantizer::{quantize_pctr, QuantizerConfig};
use crate::error::{Error, Result};
use crate::nnet::{dot, Adagrad, Param, SparseRowGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeMode {
    /// Row lookup at the quantized code.
    Quantized,
    /// Interpolated rows; differentiable in p.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub quantizer: QuantizerConfig,
    pub dim: usize,
    pub codebook: Param,
}

/// Forward state needed by [`Bridge::backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCache {
    pub p: f64,
    pub code: usize,
    pub mode: BridgeMode,
    lo: usize,
    t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeBackward {
    /// (row, weight) pairs receiving `weight * upstream`.
    pub rows: Vec<(usize, f64)>,
    pub grad_wrt_p: f64,
}

impl Bridge {
    pub fn new<R: Rng>(quantizer: QuantizerConfig, dim: usize, init_scale: f64, rng: &mut R) -> Result<Self> {
        quantizer.validate()?;
        if dim == 0 {
            return Err(Error::config("bridge.dim", "must be positive"));
        }
        let values = (0..quantizer.k * dim)
            .map(|_| rng.random_range(-init_scale..=init_scale))
            .collect();
        Ok(Self {
            quantizer,
            dim,
            codebook: Param::new(values),
        })
    }

    #[inline]
    pub fn row(&self, code: usize) -> &[f64] {
        &self.codebook.value[code * self.dim..(code + 1) * self.dim]
    }

    fn interpolation(&self, p: f64) -> (usize, f64) {
        let u = self.quantizer.position(p);
        let lo = (u.floor() as usize).min(self.quantizer.k - 2);
        (lo, u - lo as f64)
    }

    /// Codebook row at `quantize_pctr(p)`.
    pub fn embed(&self, p: f64) -> Result<(usize, &[f64])> {
        let code = quantize_pctr(p, &self.quantizer)?;
        Ok((code, self.row(code)))
    }

    pub fn forward(&self, p: f64, mode: BridgeMode) -> Result<(Vec<f64>, BridgeCache)> {
        let code = quantize_pctr(p, &self.quantizer)?;
        let (lo, t) = self.interpolation(p);
        let cache = BridgeCache { p, code, mode, lo, t };
        let out = match mode {
            BridgeMode::Quantized => self.row(code).to_vec(),
            BridgeMode::Surrogate => {
                let (a, b) = (self.row(lo), self.row(lo + 1));
                a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
            }
        };
        Ok((out, cache))
    }

    /// Codebook rows to credit with `upstream`, and dL/dp through the
    /// surrogate. In quantized mode only the active row is credited.
    pub fn backward(&self, cache: &BridgeCache, upstream: &[f64]) -> Result<BridgeBackward> {
        if upstream.len() != self.dim {
            return Err(Error::ShapeMismatch {
                context: "bridge upstream".into(),
                expected: self.dim,
                actual: upstream.len(),
            });
        }
        let (a, b) = (self.row(cache.lo), self.row(cache.lo + 1));
        let diff: f64 = upstream.iter().zip(a.iter().zip(b)).map(|(g, (x, y))| g * (y - x)).sum();
        let grad_wrt_p = diff * self.quantizer.slope(cache.p);
        let rows = match cache.mode {
            BridgeMode::Quantized => vec![(cache.code, 1.0)],
            BridgeMode::Surrogate => vec![(cache.lo, 1.0 - cache.t), (cache.lo + 1, cache.t)],
        };
        Ok(BridgeBackward { rows, grad_wrt_p })
    }

    pub fn accumulate(&self, back: &BridgeBackward, upstream: &[f64], grad: &mut SparseRowGrad) {
        for &(row, w) in &back.rows {
            if w != 0.0 {
                grad.add_scaled(row, upstream, w);
            }
        }
    }

    pub fn apply_adagrad(&mut self, grad: &SparseRowGrad, opt: &Adagrad, scale: f64) -> Result<()> {
        if grad.rows.values().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient of bridge codebook".into()));
        }
        let d = self.dim;
        for (&row, g) in &grad.rows {
            let r = row * d..(row + 1) * d;
            opt.step(
                "bridge.codebook",
                &mut self.codebook.value[r.clone()],
                g,
                &mut self.codebook.accum[r],
                scale,
            )?;
        }
        Ok(())
    }

    /// Sum of `upstream . row` differences, exposed for diagnostics.
    pub fn local_slope(&self, p: f64, upstream: &[f64]) -> f64 {
        let (lo, _) = self.interpolation(p);
        let d: Vec<f64> = self.row(lo + 1).iter().zip(self.row(lo)).map(|(y, x)| y - x).collect();
        dot(&d, upstream) * self.quantizer.slope(p)
    }
}
