use rand::seq::index::sample;
use rand::Rng;

use super::bridge::BridgeMode;
use super::features::{ArInput, AR_FIELDS, CR_FIELDS};
use super::model::{Example, JacConfig, JacGrads, JacModel};
use super::towers::{ArConfig, BridgeConfig, CrConfig};
use crate::error::Result;
use crate::nnet::{bce_with_logit, flat_get, flat_len, flat_set, GradCheckable, Param};
use crate::rng::sub_rng;

/// Gradient-check harness for the joint model on the surrogate bridge
/// path: loss = sum over examples of BCE_ad + lambda * BCE_cr.
pub struct JacGradProbe {
    pub model: JacModel,
    pub examples: Vec<Example>,
    /// Negative control: backpropagate the creative loss with the wrong sign.
    pub flip_cr_sign: bool,
}

/// A joint model small enough to check every block by finite differences.
/// The bridge gradient is unscaled so the analytic gradient is exact.
pub fn small_jac_config(seed: u64) -> JacConfig {
    JacConfig {
        seed,
        ar: ArConfig {
            embed_dim: 3,
            buckets: 64,
            cross_layers: 2,
            hidden: vec![6, 5],
            creative_aware: false,
            init_scale: 0.3,
        },
        cr: CrConfig {
            embed_dim: 2,
            buckets: 64,
            hidden: vec![5, 3],
            bridge: Some(BridgeConfig { k: 16, r: 10.0, dim: 4 }),
            init_scale: 0.3,
        },
        bridge_grad_scale: 1.0,
        ..JacConfig::default()
    }
}

impl JacGradProbe {
    /// Random feature ids, behavior sequences of length 0..=4 and labels.
    pub fn new(config: &JacConfig, num_examples: usize) -> Result<Self> {
        let model = JacModel::new(config)?;
        let mut rng = sub_rng(config.seed, "gradcheck.examples");
        let examples = (0..num_examples)
            .map(|_| {
                let seq_len = rng.random_range(0..=4);
                Example {
                    ar: ArInput {
                        fields: (0..AR_FIELDS).map(|_| rng.random()).collect(),
                        target_field: 4,
                        behavior: (0..seq_len).map(|_| rng.random()).collect(),
                    },
                    cr: (0..CR_FIELDS).map(|_| rng.random()).collect(),
                    label: rng.random_bool(0.5),
                }
            })
            .collect();
        Ok(Self {
            model,
            examples,
            flip_cr_sign: false,
        })
    }

    fn blocks(&self) -> Vec<(String, &Param)> {
        self.model.params()
    }

    /// `count` indices with a nonzero analytic gradient plus a quarter as
    /// many arbitrary ones.
    pub fn probe_indices(&mut self, count: usize, seed: u64) -> Vec<usize> {
        let g = self.analytic_grad();
        let nonzero: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let mut rng = sub_rng(seed, "gradcheck.probes");
        let mut out: Vec<usize> = sample(&mut rng, nonzero.len(), count.min(nonzero.len()))
            .into_iter()
            .map(|i| nonzero[i])
            .collect();
        out.extend(sample(&mut rng, g.len(), (count / 4).min(g.len())).into_iter());
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl GradCheckable for JacGradProbe {
    fn num_params(&self) -> usize {
        flat_len(&self.blocks())
    }

    fn get_param(&self, index: usize) -> f64 {
        flat_get(&self.blocks(), index).expect("index in range").1
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let mut b = self.model.params_mut();
        flat_set(&mut b, index, value);
    }

    fn loss(&self) -> f64 {
        let lambda = self.model.config.lambda;
        self.examples
            .iter()
            .map(|ex| {
                let f = self.model.forward(ex, BridgeMode::Surrogate).expect("forward");
                let y = ex.label as u8 as f64;
                bce_with_logit(f.ar.logit, y) + lambda * bce_with_logit(f.cr.logit, y)
            })
            .sum()
    }

    fn analytic_grad(&mut self) -> Vec<f64> {
        let mut g = JacGrads::zeros_like(&self.model);
        let w = if self.flip_cr_sign { -1.0 } else { 1.0 } * self.model.config.lambda;
        for ex in &self.examples {
            self.model
                .accumulate(ex, BridgeMode::Surrogate, w, &mut g)
                .expect("backward");
        }
        let m = &self.model;
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(g.ar.table.to_dense(m.ar.table.num_buckets()));
        g.ar.attention.flatten_into(&mut out);
        g.ar.cross.flatten_into(&mut out);
        g.ar.mlp.flatten_into(&mut out);
        out.extend(g.cr.table.to_dense(m.cr.table.num_buckets()));
        if let Some(b) = &m.cr.bridge {
            out.extend(g.cr.bridge.to_dense(b.quantizer.k));
        }
        g.cr.mlp.flatten_into(&mut out);
        out
    }

    fn describe(&self, index: usize) -> String {
        flat_get(&self.blocks(), index)
            .map(|(n, _)| n)
            .unwrap_or_else(|| format!("param[{index}]"))
    }
}
