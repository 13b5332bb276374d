use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bridge::BridgeMode;
use super::features::{ar_input, cr_fields, ArInput};
use super::towers::{ArCache, ArConfig, BridgeConfig, ArGrads, ArTower, CrCache, CrConfig, CrGrads, CrTower};
use crate::error::{Error, Result};
use crate::nnet::{bce_with_logit, Adagrad};
use crate::record::ImpressionRecord;
use crate::simworld::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adagrad_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            learning_rate: 0.05,
            adagrad_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(self.adagrad_eps.is_finite() && self.adagrad_eps > 0.0) {
            return Err(Error::config("train.adagrad_eps", "must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Adagrad {
        Adagrad {
            lr: self.learning_rate,
            eps: self.adagrad_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacConfig {
    pub seed: u64,
    pub ar: ArConfig,
    pub cr: CrConfig,
    /// Weight of the creative head's loss.
    pub lambda: f64,
    /// When false the bridge is a pure stop-gradient: the ad tower gets no
    /// gradient from the creative head.
    pub bridge_gradient: bool,
    /// Multiplier on the gradient passed from the bridge to the ad CTR.
    /// The default 1/K turns it into a derivative with respect to the code
    /// position normalized to [0, 1]; at scale 1 the codebook row
    /// differences times the quantizer slope swamp the ad loss.
    pub bridge_grad_scale: f64,
    pub train: TrainConfig,
}

impl Default for JacConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            ar: ArConfig::default(),
            cr: CrConfig::default(),
            lambda: 1.0,
            bridge_gradient: true,
            bridge_grad_scale: 1.0 / BridgeConfig::default().k as f64,
            train: TrainConfig::default(),
        }
    }
}

impl JacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ar.creative_aware {
            return Err(Error::config("ar.creative_aware", "the joint model's ad head is creative-blind"));
        }
        if self.cr.bridge.is_none() {
            return Err(Error::config("cr.bridge", "the joint model needs a bridge"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !self.bridge_grad_scale.is_finite() {
            return Err(Error::config("bridge_grad_scale", "must be finite"));
        }
        self.train.validate()
    }
}

/// Features and label for one impression.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ar: ArInput,
    pub cr: Vec<u64>,
    pub label: bool,
}

impl Example {
    pub fn from_record(world: &World, r: &ImpressionRecord) -> Result<Self> {
        Self::with_ad_creative_input(world, r, false)
    }

    /// `creative_ar` adds the shown creative to the ad-tower input.
    pub fn with_ad_creative_input(world: &World, r: &ImpressionRecord, creative_ar: bool) -> Result<Self> {
        let shown = creative_ar.then_some(r.shown_creative_id);
        Ok(Self {
            ar: ar_input(world, r.user_id, r.ad_id, shown)?,
            cr: cr_fields(world, r.user_id, r.ad_id, r.shown_creative_id)?,
            label: r.clicked(),
        })
    }
}

/// Mean losses over one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub loss_ad: f64,
    pub loss_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch: usize,
    pub examples: usize,
    pub loss_ad: f64,
    pub loss_cr: f64,
}

/// Per-batch training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    /// Mean of `loss(point)` over consecutive windows of `window` batches;
    /// a trailing partial window is dropped.
    pub fn window_means(&self, window: usize, loss: impl Fn(&CurvePoint) -> f64) -> Vec<f64> {
        self.points
            .chunks_exact(window.max(1))
            .map(|c| c.iter().map(&loss).sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Fraction of windows after the first whose mean loss is below the
    /// first window's.
    pub fn fraction_below_first(&self, window: usize, loss: impl Fn(&CurvePoint) -> f64) -> f64 {
        let m = self.window_means(window, loss);
        if m.len() < 2 {
            return 0.0;
        }
        m[1..].iter().filter(|&&x| x < m[0]).count() as f64 / (m.len() - 1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from("batch,examples,loss_ad,loss_cr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.batch, p.examples, p.loss_ad, p.loss_cr));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Something trained by minibatch steps over examples.
pub trait Trainable {
    type Example;
    fn make_example(&self, world: &World, r: &ImpressionRecord) -> Result<Self::Example>;
    fn train_config(&self) -> &TrainConfig;
    fn train_step(&mut self, batch: &[Self::Example]) -> Result<StepLoss>;
}

/// One pass over `log` in order, in batches of the configured size.
pub fn train_on_log<M: Trainable>(model: &mut M, world: &World, log: &[ImpressionRecord]) -> Result<TrainingCurve> {
    model.train_config().validate()?;
    if log.is_empty() {
        return Err(Error::InvalidInput("empty training log".into()));
    }
    let bs = model.train_config().batch_size;
    let mut curve = TrainingCurve::default();
    let mut seen = 0;
    for (b, chunk) in log.chunks(bs).enumerate() {
        let batch = chunk
            .iter()
            .map(|r| model.make_example(world, r))
            .collect::<Result<Vec<_>>>()?;
        let loss = model.train_step(&batch).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (batch {b}, records {}..{})", seen, seen + chunk.len())),
            e => e,
        })?;
        seen += chunk.len();
        curve.points.push(CurvePoint {
            batch: b,
            examples: seen,
            loss_ad: loss.loss_ad,
            loss_cr: loss.loss_cr,
        });
    }
    Ok(curve)
}

fn label(y: bool) -> f64 {
    y as u8 as f64
}

fn check_loss(which: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{which} loss")));
    }
    Ok(())
}

// ------------------------------------------------------------- joint model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacModel {
    pub config: JacConfig,
    pub ar: ArTower,
    pub cr: CrTower,
}

#[derive(Debug, Clone)]
pub struct JacGrads {
    pub ar: ArGrads,
    pub cr: CrGrads,
}

impl JacGrads {
    pub fn zeros_like(m: &JacModel) -> Self {
        Self {
            ar: ArGrads::zeros_like(&m.ar),
            cr: CrGrads::zeros_like(&m.cr),
        }
    }

    pub fn clear(&mut self) {
        self.ar.clear();
        self.cr.clear();
    }
}

/// Forward state of one example.
#[derive(Debug, Clone)]
pub struct JacForward {
    pub ar: ArCache,
    pub cr: CrCache,
}

impl JacForward {
    pub fn pctr_ad(&self) -> f64 {
        self.ar.p
    }

    pub fn pctr_c(&self) -> f64 {
        self.cr.p
    }
}

impl JacModel {
    pub fn new(config: &JacConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            ar: ArTower::new(&config.ar, config.seed)?,
            cr: CrTower::new(&config.cr, config.seed)?,
        })
    }

    /// The creative head sees the live ad CTR through the bridge.
    pub fn forward(&self, ex: &Example, mode: BridgeMode) -> Result<JacForward> {
        let ar = self.ar.forward(&ex.ar)?;
        let cr = self.cr.forward(&ex.cr, ar.p, mode)?;
        Ok(JacForward { ar, cr })
    }

    /// (pctr_ad, pctr_c) for one example.
    pub fn predict(&self, ex: &Example) -> Result<(f64, f64)> {
        let f = self.forward(ex, BridgeMode::Quantized)?;
        Ok((f.pctr_ad(), f.pctr_c()))
    }

    /// Adds the gradients of `BCE_ad + cr_weight * BCE_cr` for one example;
    /// returns the two unweighted losses. `cr_weight` is normally lambda.
    pub fn accumulate(&self, ex: &Example, mode: BridgeMode, cr_weight: f64, grads: &mut JacGrads) -> Result<StepLoss> {
        let f = self.forward(ex, mode)?;
        let y = label(ex.label);
        let loss_ad = bce_with_logit(f.ar.logit, y);
        let loss_cr = bce_with_logit(f.cr.logit, y);
        check_loss("ad", loss_ad)?;
        check_loss("creative", loss_cr)?;
        let d_cr = cr_weight * (f.cr.p - y);
        let grad_p = self.cr.backward(&f.cr, d_cr, &mut grads.cr)?;
        let mut d_ad = f.ar.p - y;
        if self.config.bridge_gradient {
            let p = f.ar.p;
            d_ad += self.config.bridge_grad_scale * grad_p * p * (1.0 - p);
        }
        self.ar.backward(&ex.ar, &f.ar, d_ad, &mut grads.ar)?;
        Ok(StepLoss { loss_ad, loss_cr })
    }

    pub fn apply(&mut self, grads: &JacGrads, scale: f64) -> Result<()> {
        let opt = self.config.train.optimizer();
        self.ar.apply(&grads.ar, &opt, scale)?;
        self.cr.apply(&grads.cr, &opt, scale)
    }

    pub fn params<'a>(&'a self) -> Vec<(String, &'a crate::nnet::Param)> {
        let mut v = Vec::new();
        self.ar.params(&mut v);
        self.cr.params(&mut v);
        v
    }

    pub fn params_mut<'a>(&'a mut self) -> Vec<(String, &'a mut crate::nnet::Param)> {
        let mut v = Vec::new();
        self.ar.params_mut(&mut v);
        self.cr.params_mut(&mut v);
        v
    }
}

impl Trainable for JacModel {
    type Example = Example;

    fn make_example(&self, world: &World, r: &ImpressionRecord) -> Result<Example> {
        Example::from_record(world, r)
    }

    fn train_config(&self) -> &TrainConfig {
        &self.config.train
    }

    fn train_step(&mut self, batch: &[Example]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grads = JacGrads::zeros_like(self);
        let (mut la, mut lc) = (0.0, 0.0);
        let lambda = self.config.lambda;
        for ex in batch {
            let l = self.accumulate(ex, BridgeMode::Quantized, lambda, &mut grads)?;
            la += l.loss_ad;
            lc += l.loss_cr;
        }
        let n = batch.len() as f64;
        self.apply(&grads, 1.0 / n)?;
        Ok(StepLoss {
            loss_ad: la / n,
            loss_cr: lc / n,
        })
    }
}

// --------------------------------------------------------- standalone heads

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArModelConfig {
    pub seed: u64,
    pub ar: ArConfig,
    pub train: TrainConfig,
}

impl Default for ArModelConfig {
    fn default() -> Self {
        let j = JacConfig::default();
        Self {
            seed: j.seed,
            ar: j.ar,
            train: j.train,
        }
    }
}

/// Ad tower trained on its own loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub config: ArModelConfig,
    pub tower: ArTower,
}

impl ArModel {
    pub fn new(config: &ArModelConfig) -> Result<Self> {
        config.train.validate()?;
        Ok(Self {
            config: config.clone(),
            tower: ArTower::new(&config.ar, config.seed)?,
        })
    }
}

impl Trainable for ArModel {
    type Example = Example;

    fn make_example(&self, world: &World, r: &ImpressionRecord) -> Result<Example> {
        Example::with_ad_creative_input(world, r, self.config.ar.creative_aware)
    }

    fn train_config(&self) -> &TrainConfig {
        &self.config.train
    }

    fn train_step(&mut self, batch: &[Example]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grads = ArGrads::zeros_like(&self.tower);
        let mut la = 0.0;
        for ex in batch {
            let c = self.tower.forward(&ex.ar)?;
            let y = label(ex.label);
            let l = bce_with_logit(c.logit, y);
            check_loss("ad", l)?;
            la += l;
            self.tower.backward(&ex.ar, &c, c.p - y, &mut grads)?;
        }
        let n = batch.len() as f64;
        let opt = self.config.train.optimizer();
        self.tower.apply(&grads, &opt, 1.0 / n)?;
        Ok(StepLoss {
            loss_ad: la / n,
            loss_cr: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrModelConfig {
    pub seed: u64,
    pub cr: CrConfig,
    pub train: TrainConfig,
}

impl Default for CrModelConfig {
    fn default() -> Self {
        let j = JacConfig::default();
        Self {
            seed: j.seed,
            cr: CrConfig {
                bridge: None,
                ..j.cr
            },
            train: j.train,
        }
    }
}

/// Creative tower without a bridge, trained on its own loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrModel {
    pub config: CrModelConfig,
    pub tower: CrTower,
}

impl CrModel {
    pub fn new(config: &CrModelConfig) -> Result<Self> {
        config.train.validate()?;
        if config.cr.bridge.is_some() {
            return Err(Error::config("cr.bridge", "a standalone creative model has no bridge"));
        }
        Ok(Self {
            config: config.clone(),
            tower: CrTower::new(&config.cr, config.seed)?,
        })
    }
}

impl Trainable for CrModel {
    type Example = Example;

    fn make_example(&self, world: &World, r: &ImpressionRecord) -> Result<Example> {
        Example::from_record(world, r)
    }

    fn train_config(&self) -> &TrainConfig {
        &self.config.train
    }

    fn train_step(&mut self, batch: &[Example]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grads = CrGrads::zeros_like(&self.tower);
        let mut lc = 0.0;
        for ex in batch {
            let c = self.tower.forward(&ex.cr, 0.0, BridgeMode::Quantized)?;
            let y = label(ex.label);
            let l = bce_with_logit(c.logit, y);
            check_loss("creative", l)?;
            lc += l;
            self.tower.backward(&c, c.p - y, &mut grads)?;
        }
        let n = batch.len() as f64;
        let opt = self.config.train.optimizer();
        self.tower.apply(&grads, &opt, 1.0 / n)?;
        Ok(StepLoss {
            loss_ad: 0.0,
            loss_cr: lc / n,
        })
    }
}
