use serde::{Deserialize, Serialize};

use super::bridge::{Bridge, BridgeBackward, BridgeCache, BridgeMode};
use super::features::{ArInput, AR_CREATIVE_FIELDS, AR_FIELDS, CR_FIELDS};
use super::quantizer::QuantizerConfig;
use crate::error::{Error, Result};
use crate::nnet::{
    Activation, Adagrad, AttentionCache, AttentionGrads, AttentionPool, CrossGrads, CrossStack,
    CrossStackCache, DenseCache, DenseGrads, DenseStack, EmbeddingTable, Param, SparseRowGrad,
};
use crate::rng::{mix, stream, sub_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArConfig {
    pub embed_dim: usize,
    pub buckets: usize,
    pub cross_layers: usize,
    pub hidden: Vec<usize>,
    /// Adds creative fields so the tower scores (user, ad, creative).
    pub creative_aware: bool,
    pub init_scale: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            buckets: 1 << 16,
            cross_layers: 2,
            hidden: vec![64, 64, 32],
            creative_aware: false,
            init_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub k: usize,
    pub r: f64,
    pub dim: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            k: 8192,
            r: 100.0,
            dim: 128,
        }
    }
}

impl BridgeConfig {
    pub fn quantizer(&self) -> QuantizerConfig {
        QuantizerConfig { k: self.k, r: self.r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrConfig {
    pub embed_dim: usize,
    pub buckets: usize,
    pub hidden: Vec<usize>,
    /// `None` builds a creative tower without the CTR bridge. Written as
    /// `bridge = "none"` in config files.
    #[serde(with = "optional_bridge")]
    pub bridge: Option<BridgeConfig>,
    pub init_scale: f64,
}

mod optional_bridge {
    use super::BridgeConfig;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Off(Off),
        On(BridgeConfig),
    }

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    enum Off {
        None,
    }

    pub fn serialize<S: Serializer>(b: &Option<BridgeConfig>, s: S) -> Result<S::Ok, S::Error> {
        match b {
            None => Repr::Off(Off::None).serialize(s),
            Some(c) => Repr::On(c.clone()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BridgeConfig>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None | Some(Repr::Off(_)) => None,
            Some(Repr::On(c)) => Some(c),
        })
    }
}

impl Default for CrConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            buckets: 1 << 16,
            hidden: vec![32, 16, 8],
            bridge: Some(BridgeConfig::default()),
            init_scale: 0.05,
        }
    }
}

fn widths(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

fn check_fields(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- ad tower

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArTower {
    pub seed: u64,
    pub config: ArConfig,
    pub table: EmbeddingTable,
    pub attention: AttentionPool,
    pub cross: CrossStack,
    pub mlp: DenseStack,
}

#[derive(Debug, Clone)]
pub struct ArCache {
    buckets: Vec<usize>,
    seq_buckets: Vec<usize>,
    attention: AttentionCache,
    cross: CrossStackCache,
    mlp: DenseCache,
    pub p: f64,
    pub logit: f64,
}

#[derive(Debug, Clone)]
pub struct ArGrads {
    pub table: SparseRowGrad,
    pub attention: AttentionGrads,
    pub cross: CrossGrads,
    pub mlp: DenseGrads,
}

impl ArGrads {
    pub fn zeros_like(t: &ArTower) -> Self {
        Self {
            table: SparseRowGrad::new(t.config.embed_dim),
            attention: AttentionGrads::zeros_like(&t.attention),
            cross: CrossGrads::zeros_like(&t.cross),
            mlp: DenseGrads::zeros_like(&t.mlp),
        }
    }

    pub fn clear(&mut self) {
        self.table.clear();
        self.attention.clear();
        self.cross.clear();
        self.mlp.clear();
    }
}

impl ArTower {
    /// Initializes from the `jac.ar` stream of `seed`; the tower's
    /// parameters do not depend on anything else.
    pub fn new(config: &ArConfig, seed: u64) -> Result<Self> {
        if config.hidden.contains(&0) {
            return Err(Error::config("ar.hidden", "zero-width layer"));
        }
        let mut rng = sub_rng(seed, "jac.ar");
        let d = config.embed_dim;
        let table = EmbeddingTable::new(config.buckets, d, mix(&[seed, stream("ar.hash")]), config.init_scale, &mut rng)?;
        let attention = AttentionPool::new(d, &mut rng);
        let fields = AR_FIELDS + if config.creative_aware { AR_CREATIVE_FIELDS } else { 0 };
        let width = (fields + 1) * d;
        let cross = CrossStack::new(width, config.cross_layers, &mut rng);
        let mlp = DenseStack::new(&widths(width, &config.hidden), Activation::Sigmoid, &mut rng)?;
        Ok(Self {
            seed,
            config: config.clone(),
            table,
            attention,
            cross,
            mlp,
        })
    }

    pub fn num_fields(&self) -> usize {
        AR_FIELDS + if self.config.creative_aware { AR_CREATIVE_FIELDS } else { 0 }
    }

    pub fn forward(&self, input: &ArInput) -> Result<ArCache> {
        check_fields("ad tower fields", self.num_fields(), input.fields.len())?;
        let d = self.config.embed_dim;
        let buckets: Vec<usize> = input.fields.iter().map(|&f| self.table.bucket(f)).collect();
        let seq_buckets: Vec<usize> = input.behavior.iter().map(|&f| self.table.bucket(f)).collect();
        let mut x0 = Vec::with_capacity((buckets.len() + 1) * d);
        for &b in &buckets {
            x0.extend_from_slice(self.table.row(b));
        }
        let seq: Vec<&[f64]> = seq_buckets.iter().map(|&b| self.table.row(b)).collect();
        let attention = self
            .attention
            .forward(self.table.row(buckets[input.target_field]), &seq)?;
        x0.extend_from_slice(&attention.output);
        let cross = self.cross.forward(&x0)?;
        let (p, mlp) = self.mlp.forward(cross.output())?;
        let logit = mlp.logit();
        Ok(ArCache {
            buckets,
            seq_buckets,
            attention,
            cross,
            mlp,
            p,
            logit,
        })
    }

    pub fn predict(&self, input: &ArInput) -> Result<f64> {
        Ok(self.forward(input)?.p)
    }

    /// Accumulates gradients for dL/dlogit = `dlogit`.
    pub fn backward(&self, input: &ArInput, cache: &ArCache, dlogit: f64, grads: &mut ArGrads) -> Result<()> {
        let d = self.config.embed_dim;
        let d_cross = self.mlp.backward_logit_into(&cache.mlp, dlogit, &mut grads.mlp)?;
        let d_x0 = self.cross.backward_into(&cache.cross, &d_cross, &mut grads.cross)?;
        let nf = cache.buckets.len();
        for (i, &b) in cache.buckets.iter().enumerate() {
            grads.table.add(b, &d_x0[i * d..(i + 1) * d]);
        }
        let (d_target, d_items) =
            self.attention
                .backward_into(&cache.attention, &d_x0[nf * d..], &mut grads.attention)?;
        if !cache.attention.cold_start {
            grads.table.add(cache.buckets[input.target_field], &d_target);
            for (&b, g) in cache.seq_buckets.iter().zip(&d_items) {
                grads.table.add(b, g);
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, grads: &ArGrads, opt: &Adagrad, scale: f64) -> Result<()> {
        self.table.apply_adagrad("ar.table", &grads.table, opt, scale)?;
        self.attention.apply_adagrad("ar.attention", &grads.attention, opt, scale)?;
        self.cross.apply_adagrad("ar.cross", &grads.cross, opt, scale)?;
        self.mlp.apply_adagrad("ar.mlp", &grads.mlp, opt, scale)
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Param)>) {
        out.push(("ar.table".into(), &self.table.param));
        self.attention.params("ar.attention", out);
        self.cross.params("ar.cross", out);
        self.mlp.params("ar.mlp", out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Param)>) {
        out.push(("ar.table".into(), &mut self.table.param));
        self.attention.params_mut("ar.attention", out);
        self.cross.params_mut("ar.cross", out);
        self.mlp.params_mut("ar.mlp", out);
    }
}

// ---------------------------------------------------------- creative tower

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrTower {
    pub seed: u64,
    pub config: CrConfig,
    pub table: EmbeddingTable,
    pub bridge: Option<Bridge>,
    pub mlp: DenseStack,
}

#[derive(Debug, Clone)]
pub struct CrCache {
    buckets: Vec<usize>,
    bridge: Option<BridgeCache>,
    mlp: DenseCache,
    pub p: f64,
    pub logit: f64,
}

impl CrCache {
    /// Active bridge code, if the tower has a bridge.
    pub fn code(&self) -> Option<usize> {
        self.bridge.map(|b| b.code)
    }
}

#[derive(Debug, Clone)]
pub struct CrGrads {
    pub table: SparseRowGrad,
    pub bridge: SparseRowGrad,
    pub mlp: DenseGrads,
}

impl CrGrads {
    pub fn zeros_like(t: &CrTower) -> Self {
        Self {
            table: SparseRowGrad::new(t.config.embed_dim),
            bridge: SparseRowGrad::new(t.bridge.as_ref().map(|b| b.dim).unwrap_or(0)),
            mlp: DenseGrads::zeros_like(&t.mlp),
        }
    }

    pub fn clear(&mut self) {
        self.table.clear();
        self.bridge.clear();
        self.mlp.clear();
    }
}

impl CrTower {
    /// Initializes from the `jac.cr` stream of `seed`.
    pub fn new(config: &CrConfig, seed: u64) -> Result<Self> {
        if config.hidden.contains(&0) {
            return Err(Error::config("cr.hidden", "zero-width layer"));
        }
        let mut rng = sub_rng(seed, "jac.cr");
        let d = config.embed_dim;
        let table = EmbeddingTable::new(config.buckets, d, mix(&[seed, stream("cr.hash")]), config.init_scale, &mut rng)?;
        let bridge = match &config.bridge {
            Some(b) => Some(Bridge::new(b.quantizer(), b.dim, config.init_scale, &mut rng)?),
            None => None,
        };
        let width = CR_FIELDS * d + bridge.as_ref().map(|b| b.dim).unwrap_or(0);
        let mlp = DenseStack::new(&widths(width, &config.hidden), Activation::Sigmoid, &mut rng)?;
        Ok(Self {
            seed,
            config: config.clone(),
            table,
            bridge,
            mlp,
        })
    }

    pub fn has_bridge(&self) -> bool {
        self.bridge.is_some()
    }

    /// `bridge_p` is the CTR fed to the bridge; ignored without a bridge.
    pub fn forward(&self, fields: &[u64], bridge_p: f64, mode: BridgeMode) -> Result<CrCache> {
        check_fields("creative tower fields", CR_FIELDS, fields.len())?;
        let buckets: Vec<usize> = fields.iter().map(|&f| self.table.bucket(f)).collect();
        let mut x = Vec::with_capacity(self.mlp.input_width());
        for &b in &buckets {
            x.extend_from_slice(self.table.row(b));
        }
        let bridge = match &self.bridge {
            Some(br) => {
                let (v, cache) = br.forward(bridge_p, mode)?;
                x.extend_from_slice(&v);
                Some(cache)
            }
            None => None,
        };
        let (p, mlp) = self.mlp.forward(&x)?;
        let logit = mlp.logit();
        Ok(CrCache {
            buckets,
            bridge,
            mlp,
            p,
            logit,
        })
    }

    /// Accumulates gradients; returns dL/d(bridge input) through the
    /// surrogate, or zero without a bridge.
    pub fn backward(&self, cache: &CrCache, dlogit: f64, grads: &mut CrGrads) -> Result<f64> {
        let d = self.config.embed_dim;
        let dx = self.mlp.backward_logit_into(&cache.mlp, dlogit, &mut grads.mlp)?;
        for (i, &b) in cache.buckets.iter().enumerate() {
            grads.table.add(b, &dx[i * d..(i + 1) * d]);
        }
        match (&self.bridge, &cache.bridge) {
            (Some(br), Some(bc)) => {
                let up = &dx[cache.buckets.len() * d..];
                let back: BridgeBackward = br.backward(bc, up)?;
                br.accumulate(&back, up, &mut grads.bridge);
                Ok(back.grad_wrt_p)
            }
            _ => Ok(0.0),
        }
    }

    pub fn apply(&mut self, grads: &CrGrads, opt: &Adagrad, scale: f64) -> Result<()> {
        self.table.apply_adagrad("cr.table", &grads.table, opt, scale)?;
        if let Some(b) = &mut self.bridge {
            b.apply_adagrad(&grads.bridge, opt, scale)?;
        }
        self.mlp.apply_adagrad("cr.mlp", &grads.mlp, opt, scale)
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Param)>) {
        out.push(("cr.table".into(), &self.table.param));
        if let Some(b) = &self.bridge {
            out.push(("cr.bridge".into(), &b.codebook));
        }
        self.mlp.params("cr.mlp", out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Param)>) {
        out.push(("cr.table".into(), &mut self.table.param));
        if let Some(b) = &mut self.bridge {
            out.push(("cr.bridge".into(), &mut b.codebook));
        }
        self.mlp.params_mut("cr.mlp", out);
    }
}
