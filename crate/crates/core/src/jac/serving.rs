use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::bridge::BridgeMode;
use super::features::{ar_input, cr_fields_for_profile};
use super::model::JacModel;
use super::towers::{ArTower, CrTower};
use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::metrics::{CreativeRanker, RankContext};
use crate::record::ImpressionRecord;
use crate::simworld::World;

/// Overall CTR used for ads without history.
pub const GLOBAL_PRIOR_CTR: f64 = 0.024;

/// Per-ad CTR from a log with Laplace smoothing, (clicks + 1) / (imps + 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalCtr {
    pub prior: f64,
    pub ctr: BTreeMap<AdId, f64>,
}

impl HistoricalCtr {
    pub fn from_log(log: &[ImpressionRecord], prior: f64) -> Self {
        let mut counts: BTreeMap<AdId, (u64, u64)> = BTreeMap::new();
        for r in log {
            let e = counts.entry(r.ad_id).or_default();
            e.0 += r.click as u64;
            e.1 += 1;
        }
        let ctr = counts
            .into_iter()
            .map(|(a, (c, n))| (a, (c as f64 + 1.0) / (n as f64 + 2.0)))
            .collect();
        Self { prior, ctr }
    }

    pub fn empty(prior: f64) -> Self {
        Self {
            prior,
            ctr: BTreeMap::new(),
        }
    }

    /// The ad's CTR and whether it fell back to the prior.
    pub fn get(&self, ad: AdId) -> (f64, bool) {
        match self.ctr.get(&ad) {
            Some(&p) => (p, false),
            None => (self.prior, true),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let h: Self = serde_json::from_str(&s).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&h.prior) || h.ctr.values().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(format!("{}: CTR outside [0, 1]", path.display())));
        }
        Ok(h)
    }
}

/// The ad tower alone, for serving.
#[derive(Debug, Clone, PartialEq)]
pub struct ArPlus {
    pub tower: ArTower,
}

impl ArPlus {
    pub fn score(&self, world: &World, user: UserId, ad: AdId) -> Result<f64> {
        self.tower.predict(&ar_input(world, user, ad, None)?)
    }

    /// For creative-aware towers.
    pub fn score_with_creative(&self, world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64> {
        self.tower.predict(&ar_input(world, user, ad, Some(creative))?)
    }
}

/// The creative tower alone, for serving. If it has a bridge, the bridge
/// reads the ad's historical CTR instead of a live ad-tower prediction.
#[derive(Debug)]
pub struct CrPlus {
    pub tower: CrTower,
    pub historical: HistoricalCtr,
    cold_lookups: AtomicU64,
}

impl CrPlus {
    pub fn new(tower: CrTower, historical: HistoricalCtr) -> Self {
        Self {
            tower,
            historical,
            cold_lookups: AtomicU64::new(0),
        }
    }

    /// A bridge-less tower; the table is unused.
    pub fn standalone(tower: CrTower) -> Self {
        Self::new(tower, HistoricalCtr::empty(GLOBAL_PRIOR_CTR))
    }

    /// The CTR fed to the bridge for `ad`.
    pub fn bridge_input(&self, ad: AdId) -> f64 {
        if !self.tower.has_bridge() {
            return 0.0;
        }
        let (p, cold) = self.historical.get(ad);
        if cold {
            self.cold_lookups.fetch_add(1, Ordering::Relaxed);
        }
        p
    }

    /// Number of lookups that used the prior so far.
    pub fn cold_lookups(&self) -> u64 {
        self.cold_lookups.load(Ordering::Relaxed)
    }

    pub fn score(&self, world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64> {
        let u = world.user(user)?;
        self.score_profile(world, u.demo, u.age, ad, creative)
    }

    /// Score for any user with the given demographic bit and age bucket.
    pub fn score_profile(&self, world: &World, demo: u8, age: u32, ad: AdId, creative: CreativeId) -> Result<f64> {
        let fields = cr_fields_for_profile(world, demo, age, ad, creative)?;
        let c = self.tower.forward(&fields, self.bridge_input(ad), BridgeMode::Quantized)?;
        Ok(c.p)
    }
}

/// Splits a joint model into independently servable halves.
pub fn split_for_serving(model: &JacModel, historical: HistoricalCtr) -> (ArPlus, CrPlus) {
    (
        ArPlus {
            tower: model.ar.clone(),
        },
        CrPlus::new(model.cr.clone(), historical),
    )
}

/// Adapts a [`CrPlus`] to the ranker interface. Scoring errors become NaN,
/// which replay metrics reject.
pub struct CrRanker<'a> {
    pub model: &'a CrPlus,
    pub world: &'a World,
}

impl CreativeRanker for CrRanker<'_> {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        self.model
            .score(self.world, ctx.user, ctx.ad, creative)
            .unwrap_or(f64::NAN)
    }
}
