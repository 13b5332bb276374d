use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::world::{generate_world, World};
use crate::error::{Error, Result};

/// Everything needed to regenerate a world file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: WorldConfig,
    pub base_logit: f64,
    pub users: usize,
    pub ads: usize,
    pub creatives: usize,
}

impl WorldManifest {
    pub fn of(world: &World) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: world.config.seed,
            config: world.config.clone(),
            base_logit: world.base_logit,
            users: world.users.len(),
            ads: world.ads.len(),
            creatives: world.creatives.len(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Finds the creative effect scale at which always showing the best
/// creative lifts mean CTR by `target_lift` (relative) in worlds built from
/// `cfg`. Bisection over [0, 4].
pub fn calibrate_creative_scale(cfg: &WorldConfig, target_lift: f64, samples: u64) -> Result<f64> {
    if !(target_lift > 0.0) {
        return Err(Error::config("target_lift", "must be positive"));
    }
    let lift_at = |scale: f64| -> Result<f64> {
        let w = generate_world(&WorldConfig {
            creative_effect_scale: scale,
            warmup_impressions_per_user: 0,
            ..cfg.clone()
        })?;
        Ok(w.oracle_creative_lift(cfg.seed, samples))
    };
    let (mut lo, mut hi) = (0.0, 4.0);
    if lift_at(hi)? < target_lift {
        return Err(Error::config("target_lift", "unreachable with scale <= 4"));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if lift_at(mid)? < target_lift {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_seed_and_counts() {
        let w = generate_world(&WorldConfig {
            num_users: 20,
            num_ads: 30,
            slots: 2,
            warmup_impressions_per_user: 10,
            ..WorldConfig::default()
        })
        .unwrap();
        let m = WorldManifest::of(&w);
        assert_eq!(m.seed, 7);
        assert_eq!(m.ads, 30);
        assert_eq!(m.creatives, w.creatives.len());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        let back: WorldManifest = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
