//! Two-tower creative baseline: a user tower and an ad-creative tower whose
//! output vectors are compared by cosine similarity.

use serde::{Deserialize, Serialize};

use super::features::{tt_item_fields, tt_user_fields};
use super::model::{StepLoss, Trainable, TrainConfig};
use crate::error::{Error, Result};
use crate::ids::CreativeId;
use crate::metrics::{CreativeRanker, RankContext};
use crate::nnet::{
    bce_with_logit, dot, sigmoid, Activation, DenseCache, DenseGrads, DenseStack, EmbeddingTable, Param,
    SparseRowGrad,
};
use crate::record::ImpressionRecord;
use crate::rng::{mix, stream, sub_rng};
use crate::simworld::World;

const USER_FIELDS: usize = 4;
const ITEM_FIELDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoTowerConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub buckets: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub init_scale: f64,
    pub train: TrainConfig,
}

impl Default for TwoTowerConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            embed_dim: 8,
            buckets: 1 << 16,
            hidden: 32,
            output_dim: 16,
            init_scale: 0.05,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTower {
    pub config: TwoTowerConfig,
    pub table: EmbeddingTable,
    pub user_mlp: DenseStack,
    pub item_mlp: DenseStack,
    /// `[scale, offset]` of the logit `scale * cos + offset`.
    pub head: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtExample {
    pub user: Vec<u64>,
    pub item: Vec<u64>,
    pub label: bool,
}

struct Side {
    buckets: Vec<usize>,
    cache: DenseCache,
}

pub struct TtCache {
    user: Side,
    item: Side,
    cos: f64,
    pub logit: f64,
    pub p: f64,
}

pub struct TtGrads {
    pub table: SparseRowGrad,
    pub user_mlp: DenseGrads,
    pub item_mlp: DenseGrads,
    pub head: Vec<f64>,
}

impl TtGrads {
    pub fn zeros_like(m: &TwoTower) -> Self {
        Self {
            table: SparseRowGrad::new(m.config.embed_dim),
            user_mlp: DenseGrads::zeros_like(&m.user_mlp),
            item_mlp: DenseGrads::zeros_like(&m.item_mlp),
            head: vec![0.0; 2],
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.user_mlp.flatten_into(out);
        self.item_mlp.flatten_into(out);
        out.extend_from_slice(&self.head);
    }
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt().max(1e-12)
}

/// Cosine similarity of two vectors.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v) / (norm(u) * norm(v))
}

impl TwoTower {
    pub fn new(config: &TwoTowerConfig) -> Result<Self> {
        config.train.validate()?;
        if config.hidden == 0 || config.output_dim == 0 {
            return Err(Error::config("two_tower", "zero-width layer"));
        }
        let mut rng = sub_rng(config.seed, "two-tower");
        let d = config.embed_dim;
        let table = EmbeddingTable::new(
            config.buckets,
            d,
            mix(&[config.seed, stream("tt.hash")]),
            config.init_scale,
            &mut rng,
        )?;
        let user_mlp = DenseStack::new(&[USER_FIELDS * d, config.hidden, config.output_dim], Activation::Identity, &mut rng)?;
        let item_mlp = DenseStack::new(&[ITEM_FIELDS * d, config.hidden, config.output_dim], Activation::Identity, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            table,
            user_mlp,
            item_mlp,
            head: Param::new(vec![1.0, 0.0]),
        })
    }

    fn side(&self, stack: &DenseStack, fields: &[u64], n: usize) -> Result<Side> {
        if fields.len() != n {
            return Err(Error::ShapeMismatch {
                context: "two-tower fields".into(),
                expected: n,
                actual: fields.len(),
            });
        }
        let buckets: Vec<usize> = fields.iter().map(|&f| self.table.bucket(f)).collect();
        let mut x = Vec::with_capacity(n * self.config.embed_dim);
        for &b in &buckets {
            x.extend_from_slice(self.table.row(b));
        }
        Ok(Side {
            buckets,
            cache: stack.forward_raw(&x)?,
        })
    }

    pub fn user_vector(&self, fields: &[u64]) -> Result<Vec<f64>> {
        Ok(self.side(&self.user_mlp, fields, USER_FIELDS)?.cache.output().to_vec())
    }

    pub fn item_vector(&self, fields: &[u64]) -> Result<Vec<f64>> {
        Ok(self.side(&self.item_mlp, fields, ITEM_FIELDS)?.cache.output().to_vec())
    }

    /// Predicted CTR from precomputed tower outputs.
    pub fn score_vectors(&self, u: &[f64], v: &[f64]) -> f64 {
        sigmoid(self.head.value[0] * cosine(u, v) + self.head.value[1])
    }

    pub fn forward(&self, user: &[u64], item: &[u64]) -> Result<TtCache> {
        let user = self.side(&self.user_mlp, user, USER_FIELDS)?;
        let item = self.side(&self.item_mlp, item, ITEM_FIELDS)?;
        let cos = cosine(user.cache.output(), item.cache.output());
        let logit = self.head.value[0] * cos + self.head.value[1];
        Ok(TtCache {
            user,
            item,
            cos,
            logit,
            p: sigmoid(logit),
        })
    }

    pub fn backward(&self, c: &TtCache, dlogit: f64, g: &mut TtGrads) -> Result<()> {
        g.head[0] += dlogit * c.cos;
        g.head[1] += dlogit;
        let dcos = dlogit * self.head.value[0];
        let (u, v) = (c.user.cache.output(), c.item.cache.output());
        let (nu, nv) = (norm(u), norm(v));
        let du: Vec<f64> = u.iter().zip(v).map(|(a, b)| dcos * (b / (nu * nv) - c.cos * a / (nu * nu))).collect();
        let dv: Vec<f64> = u.iter().zip(v).map(|(a, b)| dcos * (a / (nu * nv) - c.cos * b / (nv * nv))).collect();
        let d = self.config.embed_dim;
        let dxu = self.user_mlp.backward_output_into(&c.user.cache, &du, &mut g.user_mlp)?;
        let dxv = self.item_mlp.backward_output_into(&c.item.cache, &dv, &mut g.item_mlp)?;
        for (side, dx) in [(&c.user, &dxu), (&c.item, &dxv)] {
            for (i, &b) in side.buckets.iter().enumerate() {
                g.table.add(b, &dx[i * d..(i + 1) * d]);
            }
        }
        Ok(())
    }

    pub fn params<'a>(&'a self, out: &mut Vec<(String, &'a Param)>) {
        out.push(("tt.table".into(), &self.table.param));
        self.user_mlp.params("tt.user", out);
        self.item_mlp.params("tt.item", out);
        out.push(("tt.head".into(), &self.head));
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Param)>) {
        out.push(("tt.table".into(), &mut self.table.param));
        self.user_mlp.params_mut("tt.user", out);
        self.item_mlp.params_mut("tt.item", out);
        out.push(("tt.head".into(), &mut self.head));
    }
}

impl Trainable for TwoTower {
    type Example = TtExample;

    fn make_example(&self, world: &World, r: &ImpressionRecord) -> Result<TtExample> {
        Ok(TtExample {
            user: tt_user_fields(world, r.user_id)?,
            item: tt_item_fields(world, r.ad_id, r.shown_creative_id)?,
            label: r.clicked(),
        })
    }

    fn train_config(&self) -> &TrainConfig {
        &self.config.train
    }

    fn train_step(&mut self, batch: &[TtExample]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut g = TtGrads::zeros_like(self);
        let mut loss = 0.0;
        for ex in batch {
            let c = self.forward(&ex.user, &ex.item)?;
            let y = ex.label as u8 as f64;
            let l = bce_with_logit(c.logit, y);
            if !l.is_finite() {
                return Err(Error::NonFinite("two-tower loss".into()));
            }
            loss += l;
            self.backward(&c, c.p - y, &mut g)?;
        }
        let n = batch.len() as f64;
        let opt = self.config.train.optimizer();
        self.table.apply_adagrad("tt.table", &g.table, &opt, 1.0 / n)?;
        self.user_mlp.apply_adagrad("tt.user", &g.user_mlp, &opt, 1.0 / n)?;
        self.item_mlp.apply_adagrad("tt.item", &g.item_mlp, &opt, 1.0 / n)?;
        opt.step("tt.head", &mut self.head.value, &g.head, &mut self.head.accum, 1.0 / n)?;
        Ok(StepLoss {
            loss_ad: 0.0,
            loss_cr: loss / n,
        })
    }
}

/// Ranker over a world using cached tower outputs.
pub struct TwoTowerRanker<'a> {
    model: &'a TwoTower,
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
}

impl<'a> TwoTowerRanker<'a> {
    /// Precomputes every user and ad-creative vector of `world`.
    pub fn new(model: &'a TwoTower, world: &World) -> Result<Self> {
        let users = world
            .users
            .iter()
            .map(|u| model.user_vector(&tt_user_fields(world, u.id)?))
            .collect::<Result<_>>()?;
        let items = world
            .creatives
            .iter()
            .map(|c| model.item_vector(&tt_item_fields(world, c.ad, c.id)?))
            .collect::<Result<_>>()?;
        Ok(Self { model, users, items })
    }
}

impl CreativeRanker for TwoTowerRanker<'_> {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        match (self.users.get(ctx.user.index()), self.items.get(creative.index())) {
            (Some(u), Some(v)) => self.model.score_vectors(u, v),
            _ => f64::NAN,
        }
    }
}
