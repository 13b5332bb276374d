use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::jac::{ArPlus, CrPlus};
use crate::metrics::{CreativeRanker, RankContext};
use crate::simworld::World;

/// Creative-unaware ad CTR estimate.
pub trait AdScorer: Sync {
    fn score_ad(&self, world: &World, user: UserId, ad: AdId) -> Result<f64>;
}

/// Ad CTR estimate given the creative that would be shown.
pub trait CreativeAwareAdScorer: Sync {
    fn score_ad_creative(&self, world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64>;
}

impl AdScorer for ArPlus {
    fn score_ad(&self, world: &World, user: UserId, ad: AdId) -> Result<f64> {
        self.score(world, user, ad)
    }
}

impl CreativeAwareAdScorer for ArPlus {
    fn score_ad_creative(&self, world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64> {
        self.score_with_creative(world, user, ad, creative)
    }
}

/// True CTR of the ad averaged over its creatives, i.e. its expected CTR
/// under a random creative.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAdScorer;

impl AdScorer for OracleAdScorer {
    fn score_ad(&self, world: &World, user: UserId, ad: AdId) -> Result<f64> {
        Ok(world.mean_ad_ctr(world.user(user)?, world.ad(ad)?))
    }
}

impl CreativeAwareAdScorer for OracleAdScorer {
    fn score_ad_creative(&self, world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64> {
        world.true_ctr(user, ad, creative)
    }
}

/// Ad scores precomputed for every (user, ad) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdScoreTable {
    num_ads: usize,
    scores: Vec<f64>,
}

impl AdScoreTable {
    pub fn build(world: &World, scorer: &dyn AdScorer) -> Result<Self> {
        let mut scores = Vec::with_capacity(world.num_users() * world.num_ads());
        for u in &world.users {
            for a in &world.ads {
                scores.push(scorer.score_ad(world, u.id, a.id)?);
            }
        }
        Ok(Self {
            num_ads: world.num_ads(),
            scores,
        })
    }

    fn check(&self, world: &World) -> Result<()> {
        if world.num_ads() != self.num_ads || world.num_users() * self.num_ads != self.scores.len() {
            return Err(Error::InvalidInput("score table built for a different world".into()));
        }
        Ok(())
    }
}

impl AdScorer for AdScoreTable {
    fn score_ad(&self, world: &World, user: UserId, ad: AdId) -> Result<f64> {
        self.check(world)?;
        self.scores
            .get(user.index() * self.num_ads + ad.index())
            .copied()
            .filter(|_| ad.index() < self.num_ads)
            .ok_or_else(|| Error::UnknownId(format!("{user}/{ad}")))
    }
}

/// Creative scores precomputed for every (demographic bit, age bucket,
/// creative), for rankers that only read those user attributes.
pub struct ProfileScoreTable {
    ages: usize,
    num_creatives: usize,
    scores: Vec<f64>,
}

impl ProfileScoreTable {
    pub fn build(world: &World, score: impl Fn(u8, u32, AdId, CreativeId) -> Result<f64>) -> Result<Self> {
        let ages = world.config.age_buckets as usize;
        let num_creatives = world.creatives.len();
        let mut scores = vec![0.0; 2 * ages * num_creatives];
        for demo in 0..2u8 {
            for age in 0..ages as u32 {
                for c in &world.creatives {
                    let i = (demo as usize * ages + age as usize) * num_creatives + c.id.index();
                    scores[i] = score(demo, age, c.ad, c.id)?;
                }
            }
        }
        Ok(Self {
            ages,
            num_creatives,
            scores,
        })
    }

    /// Table for a served creative tower.
    pub fn for_cr_plus(world: &World, model: &CrPlus) -> Result<Self> {
        Self::build(world, |d, a, ad, c| model.score_profile(world, d, a, ad, c))
    }

    pub fn ranker<'a>(&'a self, world: &'a World) -> ProfileRanker<'a> {
        ProfileRanker { table: self, world }
    }
}

pub struct ProfileRanker<'a> {
    table: &'a ProfileScoreTable,
    world: &'a World,
}

impl CreativeRanker for ProfileRanker<'_> {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        let t = self.table;
        match self.world.users.get(ctx.user.index()) {
            Some(u) if (u.age as usize) < t.ages && creative.index() < t.num_creatives => {
                t.scores[(u.demo as usize * t.ages + u.age as usize) * t.num_creatives + creative.index()]
            }
            _ => f64::NAN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jac::{split_for_serving, HistoricalCtr, JacConfig, JacModel, GLOBAL_PRIOR_CTR};
    use crate::simworld::{generate_world, WorldConfig};

    fn world() -> World {
        generate_world(&WorldConfig {
            num_users: 30,
            num_ads: 40,
            warmup_impressions_per_user: 20,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ad_table_matches_direct_scores() {
        let w = world();
        let model = JacModel::new(&JacConfig::default()).unwrap();
        let (ar, _) = split_for_serving(&model, HistoricalCtr::empty(GLOBAL_PRIOR_CTR));
        let t = AdScoreTable::build(&w, &ar).unwrap();
        for (u, a) in [(0, 0), (29, 39), (7, 13)] {
            let (u, a) = (UserId(u), AdId(a));
            assert_eq!(t.score_ad(&w, u, a).unwrap(), ar.score_ad(&w, u, a).unwrap());
        }
        assert!(t.score_ad(&w, UserId(30), AdId(0)).is_err());
        assert!(t.score_ad(&w, UserId(0), AdId(40)).is_err());
    }

    #[test]
    fn profile_table_matches_direct_scores() {
        let w = world();
        let model = JacModel::new(&JacConfig::default()).unwrap();
        let mut hist = HistoricalCtr::empty(GLOBAL_PRIOR_CTR);
        hist.ctr.insert(AdId(3), 0.07);
        let (_, cr) = split_for_serving(&model, hist);
        let t = ProfileScoreTable::for_cr_plus(&w, &cr).unwrap();
        let r = t.ranker(&w);
        for u in [0u32, 11, 29] {
            for &c in &w.ads[3].creatives {
                let ctx = RankContext { user: UserId(u), ad: AdId(3), impression: 0 };
                assert_eq!(r.score(&ctx, c), cr.score(&w, UserId(u), AdId(3), c).unwrap());
            }
        }
    }

    #[test]
    fn oracle_ad_score_is_mean_creative_ctr() {
        let w = world();
        let (u, a) = (UserId(4), AdId(6));
        let cs = &w.ads[6].creatives;
        let mean = cs.iter().map(|&c| w.true_ctr(u, a, c).unwrap()).sum::<f64>() / cs.len() as f64;
        assert!((OracleAdScorer.score_ad(&w, u, a).unwrap() - mean).abs() < 1e-15);
        assert_eq!(OracleAdScorer.score_ad_creative(&w, u, a, cs[0]).unwrap(), w.true_ctr(u, a, cs[0]).unwrap());
    }
}
