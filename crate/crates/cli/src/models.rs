//! Builds rankers and ad scorers from config specs and checkpoint files.

use std::path::{Path, PathBuf};

use adcr_core::jac::{
    checkpoint_kind, split_for_serving, ArModel, ArPlus, ArTower, Checkpoint, CrModel, CrPlus, CrTower, HistoricalCtr,
    JacModel, TwoTower, TwoTowerRanker,
};
use adcr_core::pipeline::{AdScoreTable, AdScorer, CreativeAwareAdScorer, OracleAdScorer, ProfileScoreTable};
use adcr_core::simworld::{NoisyOracleRanker, OracleRanker, RandomRanker};
use adcr_core::{CreativeId, CreativeRanker, ImpressionRecord, RankContext, World};

use crate::config::{AdSpec, RankerSpec};
use crate::{CliError, Result};

/// Relative paths are taken under `base`.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Missing input files are configuration errors.
fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("{} does not exist", path.display())))
    }
}

fn historical_for(base: &Path, checkpoint: &Path, explicit: Option<&PathBuf>) -> Result<HistoricalCtr> {
    let path = match explicit {
        Some(p) => resolve_path(base, p),
        None => checkpoint.with_file_name("historical_ctr.json"),
    };
    Ok(HistoricalCtr::read_json(&existing(path)?)?)
}

fn ad_tower(path: &Path) -> Result<ArTower> {
    Ok(match checkpoint_kind(path)?.as_str() {
        "jac" => JacModel::load(path)?.ar,
        "ar" => ArModel::load(path)?.tower,
        "ar-tower" => ArTower::load(path)?,
        other => {
            return Err(CliError::Config(format!(
                "{}: a `{other}` checkpoint has no ad tower",
                path.display()
            )))
        }
    })
}

/// A creative ranker with its owned state.
pub enum LoadedRanker {
    Random(u64),
    Oracle,
    Noisy { tau: f64, seed: u64 },
    Shown,
    Profile(ProfileScoreTable),
    TwoTower(Box<TwoTower>),
    AdOnly(ArPlus),
}

impl LoadedRanker {
    /// `seed` keys the random and noisy rankers.
    pub fn load(spec: &RankerSpec, base: &Path, world: &World, seed: u64) -> Result<Self> {
        Ok(match spec {
            RankerSpec::Random => LoadedRanker::Random(seed),
            RankerSpec::Oracle => LoadedRanker::Oracle,
            RankerSpec::NoisyOracle { tau } => LoadedRanker::Noisy { tau: tau.0, seed },
            RankerSpec::Shown => LoadedRanker::Shown,
            RankerSpec::Checkpoint { path, historical } => {
                let path = existing(resolve_path(base, path))?;
                match checkpoint_kind(&path)?.as_str() {
                    "jac" => {
                        let m = JacModel::load(&path)?;
                        let (_, cr) = split_for_serving(&m, historical_for(base, &path, historical.as_ref())?);
                        LoadedRanker::Profile(ProfileScoreTable::for_cr_plus(world, &cr)?)
                    }
                    "cr-tower" => {
                        let t = CrTower::load(&path)?;
                        let cr = if t.has_bridge() {
                            CrPlus::new(t, historical_for(base, &path, historical.as_ref())?)
                        } else {
                            CrPlus::standalone(t)
                        };
                        LoadedRanker::Profile(ProfileScoreTable::for_cr_plus(world, &cr)?)
                    }
                    "cr" => {
                        let cr = CrPlus::standalone(CrModel::load(&path)?.tower);
                        LoadedRanker::Profile(ProfileScoreTable::for_cr_plus(world, &cr)?)
                    }
                    "two-tower" => LoadedRanker::TwoTower(Box::new(TwoTower::load(&path)?)),
                    "ar" | "ar-tower" => LoadedRanker::AdOnly(ArPlus { tower: ad_tower(&path)? }),
                    other => return Err(CliError::Config(format!("{}: unknown checkpoint kind `{other}`", path.display()))),
                }
            }
        })
    }

    /// `log` is needed by the `shown` ranker only; impression indices of
    /// the rank context are positions in it.
    pub fn ranker<'a>(
        &'a self,
        world: &'a World,
        log: Option<&'a [ImpressionRecord]>,
    ) -> Result<Box<dyn CreativeRanker + 'a>> {
        Ok(match self {
            LoadedRanker::Random(seed) => Box::new(RandomRanker { seed: *seed }),
            LoadedRanker::Oracle => Box::new(OracleRanker(world)),
            LoadedRanker::Noisy { tau, seed } => Box::new(NoisyOracleRanker::new(world, *tau, *seed)),
            LoadedRanker::Shown => {
                let log = log.ok_or_else(|| CliError::Config("the `shown` ranker only applies to a log".into()))?;
                Box::new(move |ctx: &RankContext, c: CreativeId| {
                    match log.get(ctx.impression as usize) {
                        Some(r) if r.shown_creative_id == c => 1.0,
                        _ => 0.0,
                    }
                })
            }
            LoadedRanker::Profile(t) => Box::new(t.ranker(world)),
            LoadedRanker::TwoTower(m) => Box::new(TwoTowerRanker::new(m, world)?),
            LoadedRanker::AdOnly(ar) => {
                let aware = ar.tower.config.creative_aware;
                Box::new(move |ctx: &RankContext, c: CreativeId| {
                    let s = if aware {
                        ar.score_with_creative(world, ctx.user, ctx.ad, c)
                    } else {
                        ar.score(world, ctx.user, ctx.ad)
                    };
                    s.unwrap_or(f64::NAN)
                })
            }
        })
    }
}

/// An ad scorer with its owned state. Creative-blind towers are tabulated
/// over every (user, ad) pair.
pub enum LoadedAd {
    Oracle,
    Blind(AdScoreTable),
    Aware(ArPlus),
}

impl LoadedAd {
    pub fn load(spec: &AdSpec, base: &Path, world: &World) -> Result<Self> {
        Ok(match spec {
            AdSpec::Oracle => LoadedAd::Oracle,
            AdSpec::Checkpoint { path } => {
                let ar = ArPlus {
                    tower: ad_tower(&existing(resolve_path(base, path))?)?,
                };
                if ar.tower.config.creative_aware {
                    LoadedAd::Aware(ar)
                } else {
                    LoadedAd::Blind(AdScoreTable::build(world, &ar)?)
                }
            }
        })
    }

    pub fn ad(&self) -> Option<&dyn AdScorer> {
        match self {
            LoadedAd::Oracle => Some(&OracleAdScorer),
            LoadedAd::Blind(t) => Some(t),
            LoadedAd::Aware(_) => None,
        }
    }

    pub fn creative_aware(&self) -> Option<&dyn CreativeAwareAdScorer> {
        match self {
            LoadedAd::Oracle => Some(&OracleAdScorer),
            LoadedAd::Blind(_) => None,
            LoadedAd::Aware(a) => Some(a),
        }
    }
}
