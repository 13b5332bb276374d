use super::serve::make_request;
use crate::error::{Error, Result};
use crate::ids::AdId;
use crate::simworld::{generate_world, World, WorldConfig};

/// World seeds the default creative effect scale is calibrated over.
pub const CALIBRATION_SEEDS: [u64; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

/// Expected relative CTR gain, over served pages, of showing each ad's best
/// creative instead of a uniformly random one. Pages hold the top `slots`
/// candidates by true mean eCPM; no clicks are sampled.
pub fn served_oracle_lift(world: &World, seed: u64, requests: u64, retrieval_m: usize, slots: usize) -> Result<f64> {
    if requests == 0 || slots == 0 {
        return Err(Error::InvalidInput("need at least one request and one slot".into()));
    }
    let (mut best, mut mean) = (0.0, 0.0);
    for id in 0..requests {
        let req = make_request(world, seed, id, retrieval_m)?;
        let u = &world.users[req.user.index()];
        let mut scored: Vec<(f64, f64, AdId)> = req
            .candidates
            .iter()
            .map(|&a| {
                let ad = &world.ads[a.index()];
                let m = world.mean_ad_ctr(u, ad);
                (m * ad.cpc, m, a)
            })
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.2.cmp(&y.2)));
        for &(_, m, a) in scored.iter().take(slots) {
            mean += m;
            best += world.best_ad_ctr(u, &world.ads[a.index()]);
        }
    }
    Ok(best / mean - 1.0)
}

/// Creative effect scale at which [`served_oracle_lift`], averaged over
/// the worlds built from `cfg` with each of `world_seeds`, equals
/// `target_lift`. Bisection over [0, 4].
pub fn calibrate_served_creative_scale(
    cfg: &WorldConfig,
    world_seeds: &[u64],
    target_lift: f64,
    requests: u64,
    retrieval_m: usize,
) -> Result<f64> {
    if !(target_lift > 0.0) {
        return Err(Error::config("target_lift", "must be positive"));
    }
    if world_seeds.is_empty() {
        return Err(Error::config("world_seeds", "must not be empty"));
    }
    let lift_at = |scale: f64| -> Result<f64> {
        let mut sum = 0.0;
        for &seed in world_seeds {
            let w = generate_world(&WorldConfig {
                seed,
                creative_effect_scale: scale,
                warmup_impressions_per_user: 0,
                ..cfg.clone()
            })?;
            sum += served_oracle_lift(&w, seed, requests, retrieval_m, cfg.slots)?;
        }
        Ok(sum / world_seeds.len() as f64)
    };
    let (mut lo, mut hi) = (0.0, 4.0);
    if lift_at(hi)? < target_lift {
        return Err(Error::config("target_lift", "unreachable with scale <= 4"));
    }
    for _ in 0..30 {
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
    fn no_creative_effect_means_no_lift() {
        let w = generate_world(&WorldConfig {
            num_users: 30,
            num_ads: 40,
            creative_effect_scale: 0.0,
            warmup_impressions_per_user: 0,
            ..WorldConfig::default()
        })
        .unwrap();
        assert_eq!(served_oracle_lift(&w, 1, 200, 20, 4).unwrap(), 0.0);
    }

    #[test]
    fn default_scale_matches_served_calibration() {
        let cfg = WorldConfig::default();
        let s = calibrate_served_creative_scale(&cfg, &CALIBRATION_SEEDS, 0.10, 2_000, 100).unwrap();
        eprintln!("calibrated creative scale {s}");
        assert!((s - cfg.creative_effect_scale).abs() < 0.005, "calibrated {s}");
    }
}
