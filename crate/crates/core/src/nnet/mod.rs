//! Minimal neural-network substrate with hand-written forward and backward
//! passes. Everything is `f64` so gradients can be checked against central
//! finite differences.

mod adagrad;
mod attention;
mod cross;
mod dense;
mod embedding;
mod gradcheck;
mod param;

pub use adagrad::{Adagrad, AdagradState};
pub use attention::{AttentionCache, AttentionGrads, AttentionPool};
pub use cross::{cross_backward, cross_layer, CrossGrads, CrossLayer, CrossStack, CrossStackCache};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer, DenseStack};
pub use embedding::{hash_embed, hash_feature, EmbeddingTable, SparseRowGrad};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradCheckable};
pub use param::{flat_get, flat_len, flat_set, Param};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit, stable for large |logit|.
#[inline]
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
