use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adagrad: `acc += g^2; p -= lr * g / sqrt(acc + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
}

impl Default for Adagrad {
    fn default() -> Self {
        Self { lr: 0.05, eps: 1e-8 }
    }
}

/// Per-parameter accumulated squared gradients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdagradState {
    pub accum: Vec<f64>,
}

impl AdagradState {
    pub fn new(len: usize) -> Self {
        Self {
            accum: vec![0.0; len],
        }
    }
}

impl Adagrad {
    /// Applies one step to a dense block. `scale` multiplies every gradient
    /// first (1/batch for mean gradients). Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(
        &self,
        block: &str,
        params: &mut [f64],
        grads: &[f64],
        accum: &mut [f64],
        scale: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != accum.len() {
            return Err(Error::ShapeMismatch {
                context: format!("adagrad block {block}"),
                expected: params.len(),
                actual: grads.len().min(accum.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {block}")));
        }
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
            let g = g * scale;
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= self.lr * g / (*a + self.eps).sqrt();
        }
        Ok(())
    }

    /// Same as [`Adagrad::step`] against an [`AdagradState`].
    pub fn step_state(
        &self,
        block: &str,
        params: &mut [f64],
        grads: &[f64],
        state: &mut AdagradState,
    ) -> Result<()> {
        self.step(block, params, grads, &mut state.accum, 1.0)
    }
}
