use serde::{Deserialize, Serialize};

use super::world::World;
use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::metrics::{select_creative, CreativeRanker, RankContext};
use crate::nnet::sigmoid;
use crate::record::ImpressionRecord;
use crate::rng::{normal, stream, uniform};

/// How the online system picks the creative shown for an ad.
#[derive(Clone, Copy)]
pub enum CreativePolicy<'a> {
    UniformRandom,
    /// Argmax of the true CTR.
    Oracle,
    /// Argmax of the true logit plus Gaussian noise of std `tau`.
    NoisyOracle { tau: f64 },
    Model(&'a dyn CreativeRanker),
}

/// Serializable policy tag for config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    UniformRandom,
    Oracle,
    NoisyOracle { tau: f64 },
}

impl PolicyKind {
    pub fn policy(self) -> CreativePolicy<'static> {
        match self {
            PolicyKind::UniformRandom => CreativePolicy::UniformRandom,
            PolicyKind::Oracle => CreativePolicy::Oracle,
            PolicyKind::NoisyOracle { tau } => CreativePolicy::NoisyOracle { tau },
        }
    }
}

/// Uniform index into `0..n` from a counter key.
#[inline]
pub(crate) fn pick(n: usize, words: &[u64]) -> usize {
    ((uniform(words) * n as f64) as usize).min(n - 1)
}

/// Ranker scoring creatives by a noisy version of the true logit. The noise
/// is a fixed function of (seed, user, ad, creative), so the ranker is pure
/// and gives the same answer offline and online. `tau` is chosen per ad
/// from its bundle size, which lets a ranker be better on some ads than on
/// others. An infinite `tau` is a pure random scorer.
pub struct NoisyOracleRanker<'w> {
    world: &'w World,
    seed: u64,
    tau_by_bundle: Vec<f64>,
}

impl<'w> NoisyOracleRanker<'w> {
    pub fn new(world: &'w World, tau: f64, seed: u64) -> Self {
        Self {
            world,
            seed,
            tau_by_bundle: vec![tau; crate::simworld::MAX_CREATIVES_PER_AD + 1],
        }
    }

    /// `tau_small` applies to ads with at most `split` creatives,
    /// `tau_large` to the rest.
    pub fn by_bundle_size(world: &'w World, tau_small: f64, tau_large: f64, split: usize, seed: u64) -> Self {
        let tau_by_bundle = (0..=crate::simworld::MAX_CREATIVES_PER_AD)
            .map(|n| if n <= split { tau_small } else { tau_large })
            .collect();
        Self {
            world,
            seed,
            tau_by_bundle,
        }
    }

    fn tau(&self, ad: AdId) -> f64 {
        let n = self.world.ads[ad.index()].creatives.len();
        self.tau_by_bundle[n.min(self.tau_by_bundle.len() - 1)]
    }
}

impl CreativeRanker for NoisyOracleRanker<'_> {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        let w = self.world;
        let noise = normal(&[self.seed, stream("noisy-oracle"), ctx.user.0 as u64, ctx.ad.0 as u64, creative.0 as u64]);
        let tau = self.tau(ctx.ad);
        if tau.is_infinite() {
            return sigmoid(noise);
        }
        let u = &w.users[ctx.user.index()];
        let a = &w.ads[ctx.ad.index()];
        let c = &w.creatives[creative.index()];
        let p = w.ctr_of(u, a, c);
        let logit = (p / (1.0 - p)).ln();
        sigmoid(logit + tau * noise)
    }
}

/// Ranker returning the true CTR.
pub struct OracleRanker<'w>(pub &'w World);

impl CreativeRanker for OracleRanker<'_> {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        let w = self.0;
        w.ctr_of(
            &w.users[ctx.user.index()],
            &w.ads[ctx.ad.index()],
            &w.creatives[creative.index()],
        )
    }
}

/// Ranker drawing an independent uniform score per (impression, creative).
pub struct RandomRanker {
    pub seed: u64,
}

impl CreativeRanker for RandomRanker {
    fn score(&self, ctx: &RankContext, creative: CreativeId) -> f64 {
        uniform(&[self.seed, stream("random-ranker"), ctx.impression, creative.0 as u64])
    }
}

pub(crate) fn choose_creative(
    world: &World,
    policy: &CreativePolicy<'_>,
    ctx: &RankContext,
    seed: u64,
) -> Result<CreativeId> {
    let ad = &world.ads[ctx.ad.index()];
    let cs = &ad.creatives;
    Ok(match *policy {
        CreativePolicy::UniformRandom => cs[pick(cs.len(), &[seed, stream("log.creative"), ctx.impression])],
        CreativePolicy::Oracle => select_creative(&OracleRanker(world), ctx, cs)?.1,
        CreativePolicy::NoisyOracle { tau } => {
            let r = NoisyOracleRanker::new(world, tau, seed);
            select_creative(&r, ctx, cs)?.1
        }
        CreativePolicy::Model(r) => select_creative(r, ctx, cs)?.1,
    })
}

fn record(world: &World, user: UserId, ad: AdId, shown: CreativeId, click_u: f64) -> ImpressionRecord {
    let u = &world.users[user.index()];
    let a = &world.ads[ad.index()];
    let p = world.ctr_of(u, a, &world.creatives[shown.index()]);
    ImpressionRecord {
        user_id: user,
        ad_id: ad,
        shown_creative_id: shown,
        candidate_creative_ids: a.creatives.clone(),
        click: (click_u < p) as u8,
        cpc_bid: a.cpc,
    }
}

/// Impressions for uniformly sampled (user, ad) pairs, with the creative
/// picked by `policy` and the click drawn from the true CTR.
pub fn generate_log(
    world: &World,
    policy: &CreativePolicy<'_>,
    num_impressions: usize,
    seed: u64,
) -> Result<Vec<ImpressionRecord>> {
    let s_user = stream("log.user");
    let s_ad = stream("log.ad");
    let s_click = stream("log.click");
    let mut out = Vec::with_capacity(num_impressions);
    for i in 0..num_impressions as u64 {
        let user = UserId(pick(world.num_users(), &[seed, s_user, i]) as u32);
        let ad = AdId(pick(world.num_ads(), &[seed, s_ad, i]) as u32);
        let ctx = RankContext { user, ad, impression: i };
        let shown = choose_creative(world, policy, &ctx, seed)?;
        out.push(record(world, user, ad, shown, uniform(&[seed, s_click, i])));
    }
    Ok(out)
}

/// Logs every creative of every context once. Match rates under any
/// ranker are then exactly one over the bundle size.
pub fn exhaustive_log(world: &World, contexts: &[(UserId, AdId)], seed: u64) -> Result<Vec<ImpressionRecord>> {
    let s_click = stream("log.exhaustive.click");
    let mut out = Vec::new();
    for (i, &(user, ad)) in contexts.iter().enumerate() {
        world.user(user)?;
        let cs = world.ad(ad)?.creatives.clone();
        for c in cs {
            out.push(record(world, user, ad, c, uniform(&[seed, s_click, i as u64, c.0 as u64])));
        }
    }
    Ok(out)
}

/// eCPM = CTR x CPC x 1000.
pub fn ecpm(ctr: f64, cpc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ctr) {
        return Err(Error::InvalidInput(format!("ctr {ctr} outside [0, 1]")));
    }
    if !(cpc.is_finite() && cpc >= 0.0) {
        return Err(Error::InvalidInput(format!("cpc {cpc} must be finite and >= 0")));
    }
    Ok(ctr * cpc * 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_world, ForcedAd, WorldConfig};

    fn world() -> World {
        generate_world(&WorldConfig {
            num_users: 100,
            num_ads: 100,
            creative_effect_scale: 0.4,
            warmup_impressions_per_user: 100,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ecpm_examples() {
        assert!((ecpm(0.02, 0.5).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(ecpm(0.0, 3.0).unwrap(), 0.0);
        assert!((ecpm(0.024, 1.0).unwrap() - 24.0).abs() < 1e-12);
        assert!(ecpm(0.1, -1.0).is_err());
    }

    #[test]
    fn records_are_valid_and_deterministic() {
        let w = world();
        let a = generate_log(&w, &CreativePolicy::UniformRandom, 2000, 3).unwrap();
        let b = generate_log(&w, &CreativePolicy::UniformRandom, 2000, 3).unwrap();
        assert_eq!(a, b);
        for r in &a {
            r.validate(crate::record::MAX_CANDIDATES).unwrap();
            assert_eq!(r.candidate_creative_ids, w.ads[r.ad_id.index()].creatives);
        }
    }

    #[test]
    fn oracle_log_beats_uniform_log() {
        let w = world();
        let n = 100_000;
        let ctr = |log: &[ImpressionRecord]| log.iter().map(|r| r.click as f64).sum::<f64>() / log.len() as f64;
        let uni = ctr(&generate_log(&w, &CreativePolicy::UniformRandom, n, 5).unwrap());
        let ora = ctr(&generate_log(&w, &CreativePolicy::Oracle, n, 5).unwrap());
        let se = ((uni * (1.0 - uni) + ora * (1.0 - ora)) / n as f64).sqrt();
        assert!(ora - uni > 3.0 * se, "oracle {ora} uniform {uni} se {se}");
    }

    #[test]
    fn uniform_log_ctr_matches_mean_true_ctr() {
        let w = world();
        let n = 200_000;
        let log = generate_log(&w, &CreativePolicy::UniformRandom, n, 9).unwrap();
        let emp = log.iter().map(|r| r.click as f64).sum::<f64>() / n as f64;
        let truth = log
            .iter()
            .map(|r| w.true_ctr(r.user_id, r.ad_id, r.shown_creative_id).unwrap())
            .sum::<f64>()
            / n as f64;
        let se = (truth * (1.0 - truth) / n as f64).sqrt();
        assert!((emp - truth).abs() < 4.0 * se, "{emp} vs {truth}");
    }

    #[test]
    fn log_ctr_converges() {
        let w = generate_world(&WorldConfig {
            num_users: 2,
            num_ads: 2,
            slots: 0,
            forced_ads: vec![
                ForcedAd { creative_ctrs: vec![0.2, 0.2], cpc: 1.0 },
                ForcedAd { creative_ctrs: vec![0.3, 0.3, 0.3], cpc: 1.0 },
            ],
            ..WorldConfig::default()
        })
        .unwrap();
        let dev = |n: usize| {
            let log = generate_log(&w, &CreativePolicy::UniformRandom, n, 1).unwrap();
            let emp = log.iter().map(|r| r.click as f64).sum::<f64>() / n as f64;
            let truth = log
                .iter()
                .map(|r| w.true_ctr(r.user_id, r.ad_id, r.shown_creative_id).unwrap())
                .sum::<f64>()
                / n as f64;
            (emp - truth).abs()
        };
        let (small, large) = (dev(10_000), dev(1_000_000));
        assert!(large < 0.002, "{large}");
        assert!(large < small.max(0.002));
    }

    #[test]
    fn noisy_oracle_extremes() {
        let w = world();
        let exact = NoisyOracleRanker::new(&w, 0.0, 1);
        let oracle = OracleRanker(&w);
        for a in w.ads.iter().take(30) {
            let ctx = RankContext { user: UserId(4), ad: a.id, impression: 0 };
            assert_eq!(
                select_creative(&exact, &ctx, &a.creatives).unwrap(),
                select_creative(&oracle, &ctx, &a.creatives).unwrap()
            );
        }
        let random = NoisyOracleRanker::new(&w, f64::INFINITY, 1);
        let s = random.score(&RankContext { user: UserId(0), ad: AdId(0), impression: 0 }, w.ads[0].creatives[0]);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn exhaustive_log_covers_every_creative() {
        let w = world();
        let ctx = vec![(UserId(1), AdId(2)), (UserId(3), AdId(4))];
        let log = exhaustive_log(&w, &ctx, 0).unwrap();
        let expected: usize = ctx.iter().map(|(_, a)| w.ads[a.index()].creatives.len()).sum();
        assert_eq!(log.len(), expected);
    }

    #[test]
    fn model_policy_uses_ranker() {
        let w = world();
        let first = |_: &RankContext, c: CreativeId| -(c.0 as f64) / 1e6 + 0.5;
        let log = generate_log(&w, &CreativePolicy::Model(&first), 500, 2).unwrap();
        for r in &log {
            assert_eq!(r.shown_creative_id, r.candidate_creative_ids[0]);
        }
    }
}
