//! Log-scale quantization of a predicted CTR into one of `k` codes.
//!
//! `code = floor(k * log_{r+1}(1 + r p))`, clamped to `k - 1` (p = 1 would
//! otherwise map to `k`). Larger `r` spends more codes on small CTRs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    pub k: usize,
    pub r: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { k: 8192, r: 100.0 }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("quantizer.k", "must be at least 2"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::config("quantizer.r", "must be finite and positive"));
        }
        Ok(())
    }

    /// Continuous code position `k * log_{r+1}(1 + r p)`.
    #[inline]
    pub fn position(&self, p: f64) -> f64 {
        self.k as f64 * (self.r * p).ln_1p() / self.r.ln_1p()
    }

    /// d position / dp.
    #[inline]
    pub fn slope(&self, p: f64) -> f64 {
        self.k as f64 * self.r / ((1.0 + self.r * p) * self.r.ln_1p())
    }

    /// Smallest p whose raw code is at least `code`; inverse of `position`.
    pub fn boundary(&self, code: usize) -> f64 {
        ((code as f64 / self.k as f64) * self.r.ln_1p()).exp_m1() / self.r
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("pctr {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn quantize_pctr(p: f64, cfg: &QuantizerConfig) -> Result<usize> {
    check_p(p)?;
    let raw = cfg.position(p).floor() as usize;
    Ok(raw.min(cfg.k - 1))
}

/// Label information gain (bits) of bucketing predictions with `cfg`:
/// H(y) - H(y | code).
pub fn information_gain(preds: &[f64], labels: &[bool], cfg: &QuantizerConfig) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::InvalidInput("predictions and labels must be equal, non-empty".into()));
    }
    let h = |pos: f64, n: f64| -> f64 {
        let mut e = 0.0;
        for c in [pos, n - pos] {
            if c > 0.0 {
                let q = c / n;
                e -= q * q.log2();
            }
        }
        e
    };
    let mut buckets = std::collections::HashMap::<usize, (f64, f64)>::new();
    let mut pos = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let e = buckets.entry(quantize_pctr(p, cfg)?).or_default();
        e.0 += y as u8 as f64;
        e.1 += 1.0;
        pos += y as u8 as f64;
    }
    let n = preds.len() as f64;
    let conditional: f64 = buckets.values().map(|&(p, m)| m / n * h(p, m)).sum();
    Ok(h(pos, n) - conditional)
}

/// Picks `r` from `grid` by information gain at fixed `k`; ties go to the
/// earlier grid entry. Returns the choice and every score.
pub fn calibrate_r(preds: &[f64], labels: &[bool], k: usize, grid: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::config("r_grid", "empty"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &r in grid {
        let cfg = QuantizerConfig { k, r };
        cfg.validate()?;
        scores.push((r, information_gain(preds, labels, &cfg)?));
    }
    let best = scores
        .iter()
        .fold(scores[0], |b, &s| if s.1 > b.1 { s } else { b });
    Ok((best.0, scores))
}
