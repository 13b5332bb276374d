use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::nnet::sigmoid;
use crate::rng::{mix, stream, sub_rng, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    /// Binary demographic attribute.
    pub demo: u8,
    pub age: u32,
    pub region: u32,
    pub latent: Vec<f64>,
    /// Most recent clicked ads, oldest first.
    pub behavior: Vec<AdId>,
}

impl User {
    /// +1 or -1 depending on the demographic bit.
    pub fn demo_sign(&self) -> f64 {
        if self.demo == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ad {
    pub id: AdId,
    pub category: u32,
    pub latent: Vec<f64>,
    pub bias: f64,
    pub cpc: f64,
    pub creatives: Vec<CreativeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Creative {
    pub id: CreativeId,
    pub ad: AdId,
    pub style: u32,
    pub format: u32,
    /// Main effect before scaling by sigma_c.
    pub effect: f64,
    /// Demographic interaction before scaling by sigma_c; enters with the
    /// user's demographic sign.
    pub interaction: f64,
    /// Pinned true CTR, bypassing the latent model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_ctr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub base_logit: f64,
    pub users: Vec<User>,
    pub ads: Vec<Ad>,
    pub creatives: Vec<Creative>,
}

/// Triples drawn to calibrate the base logit and to measure creative lift.
const CALIBRATION_SAMPLES: u64 = 20_000;

fn normal_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std.max(0.0)).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn table<R: Rng>(rng: &mut R, rows: u32, dim: usize, std: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normal_vec(rng, dim, std)).collect()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let seed = cfg.seed;
    let d = cfg.latent_dim;

    let mut rng = sub_rng(seed, "world.attributes");
    let age_emb = table(&mut rng, cfg.age_buckets, d, cfg.user_latent_scale);
    let region_emb = table(&mut rng, cfg.regions, d, cfg.user_latent_scale);
    let demo_emb = table(&mut rng, 2, d, cfg.user_latent_scale);
    let cat_emb = table(&mut rng, cfg.categories, d, cfg.ad_latent_scale);
    let style_eff = normal_vec(&mut rng, cfg.styles as usize, cfg.style_effect_std);
    let style_int = normal_vec(&mut rng, cfg.styles as usize, cfg.interaction_std);
    let format_eff = normal_vec(&mut rng, cfg.formats as usize, cfg.format_effect_std);

    let mut rng = sub_rng(seed, "world.users");
    let mut users = Vec::with_capacity(cfg.num_users);
    for i in 0..cfg.num_users {
        let demo = rng.random_range(0..2u8);
        let age = rng.random_range(0..cfg.age_buckets);
        let region = rng.random_range(0..cfg.regions);
        let mut latent = normal_vec(&mut rng, d, cfg.user_latent_scale);
        add_into(&mut latent, &age_emb[age as usize]);
        add_into(&mut latent, &region_emb[region as usize]);
        add_into(&mut latent, &demo_emb[demo as usize]);
        users.push(User {
            id: UserId(i as u32),
            demo,
            age,
            region,
            latent,
            behavior: Vec::new(),
        });
    }

    let mut rng = sub_rng(seed, "world.ads");
    let cpc_dist = LogNormal::new(cfg.cpc_log_mean, cfg.cpc_log_std)
        .map_err(|e| Error::config("cpc_log_std", e.to_string()))?;
    let bias_dist = Normal::new(0.0, cfg.ad_bias_std).expect("finite std");
    let mut ads = Vec::with_capacity(cfg.num_ads);
    let mut creatives = Vec::new();
    for i in 0..cfg.num_ads {
        let category = rng.random_range(0..cfg.categories);
        let mut latent = normal_vec(&mut rng, d, cfg.ad_latent_scale);
        add_into(&mut latent, &cat_emb[category as usize]);
        let bias = bias_dist.sample(&mut rng);
        let mut cpc = cpc_dist.sample(&mut rng);
        let forced = cfg.forced_ads.get(i);
        let n = match forced {
            Some(f) => {
                cpc = f.cpc;
                f.creative_ctrs.len()
            }
            None => rng.random_range(cfg.creatives_min..=cfg.creatives_max),
        };
        let ad_id = AdId(i as u32);
        let mut ids = Vec::with_capacity(n);
        for k in 0..n {
            let id = CreativeId(creatives.len() as u32);
            let style = rng.random_range(0..cfg.styles);
            let format = rng.random_range(0..cfg.formats);
            let idio = normal_vec(&mut rng, 1, cfg.creative_idiosyncratic_std)[0];
            creatives.push(Creative {
                id,
                ad: ad_id,
                style,
                format,
                effect: style_eff[style as usize] + format_eff[format as usize] + idio,
                interaction: style_int[style as usize],
                forced_ctr: forced.map(|f| f.creative_ctrs[k]),
            });
            ids.push(id);
        }
        ads.push(Ad {
            id: ad_id,
            category,
            latent,
            bias,
            cpc,
            creatives: ids,
        });
    }

    let mut world = World {
        config: cfg.clone(),
        base_logit: 0.0,
        users,
        ads,
        creatives,
    };
    world.base_logit = match cfg.base_logit {
        Some(b) => b,
        None => calibrate_base_logit(&world, cfg.target_ctr),
    };
    world.fill_behavior();
    Ok(world)
}

/// Bisection on the base logit so the mean true CTR over a fixed sample of
/// uniformly drawn (user, ad, creative) triples hits `target`.
fn calibrate_base_logit(world: &World, target: f64) -> f64 {
    let triples = world.sample_triples(world.config.seed, "world.calibrate", CALIBRATION_SAMPLES);
    let offsets: Vec<f64> = triples
        .iter()
        .map(|&(u, a, c)| world.logit_without_base(&world.users[u], &world.ads[a], &world.creatives[c]))
        .collect();
    let mean_at = |b: f64| offsets.iter().map(|o| sigmoid(b + o)).sum::<f64>() / offsets.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl World {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_ads(&self) -> usize {
        self.ads.len()
    }

    pub fn user(&self, id: UserId) -> Result<&User> {
        self.users
            .get(id.index())
            .ok_or_else(|| Error::UnknownId(format!("user {id}")))
    }

    pub fn ad(&self, id: AdId) -> Result<&Ad> {
        self.ads
            .get(id.index())
            .ok_or_else(|| Error::UnknownId(format!("ad {id}")))
    }

    pub fn creative(&self, id: CreativeId) -> Result<&Creative> {
        self.creatives
            .get(id.index())
            .ok_or_else(|| Error::UnknownId(format!("creative {id}")))
    }

    fn logit_without_base(&self, u: &User, a: &Ad, c: &Creative) -> f64 {
        let affinity: f64 = u.latent.iter().zip(&a.latent).map(|(x, y)| x * y).sum();
        affinity
            + a.bias
            + self.config.creative_effect_scale * (c.effect + u.demo_sign() * c.interaction)
    }

    /// True click probability without id validation. Callers guarantee the
    /// creative belongs to the ad.
    #[inline]
    pub fn ctr_of(&self, u: &User, a: &Ad, c: &Creative) -> f64 {
        match c.forced_ctr {
            Some(p) => p,
            None => sigmoid(self.base_logit + self.logit_without_base(u, a, c)),
        }
    }

    pub fn true_ctr(&self, user: UserId, ad: AdId, creative: CreativeId) -> Result<f64> {
        let u = self.user(user)?;
        let a = self.ad(ad)?;
        let c = self.creative(creative)?;
        if c.ad != ad {
            return Err(Error::InvalidInput(format!(
                "creative {creative} belongs to ad {}, not {ad}",
                c.ad
            )));
        }
        Ok(self.ctr_of(u, a, c))
    }

    /// Mean true CTR over the ad's creatives: what a creative-blind ranker
    /// showing a random creative can expect.
    pub fn mean_ad_ctr(&self, user: &User, ad: &Ad) -> f64 {
        let s: f64 = ad
            .creatives
            .iter()
            .map(|c| self.ctr_of(user, ad, &self.creatives[c.index()]))
            .sum();
        s / ad.creatives.len() as f64
    }

    pub fn best_ad_ctr(&self, user: &User, ad: &Ad) -> f64 {
        ad.creatives
            .iter()
            .map(|c| self.ctr_of(user, ad, &self.creatives[c.index()]))
            .fold(0.0, f64::max)
    }

    /// Uniform (user, ad, creative-of-ad) index triples, keyed by name.
    pub fn sample_triples(&self, seed: u64, name: &str, n: u64) -> Vec<(usize, usize, usize)> {
        let s = stream(name);
        (0..n)
            .map(|i| {
                let u = (uniform(&[seed, s, i, 0]) * self.users.len() as f64) as usize;
                let a = (uniform(&[seed, s, i, 1]) * self.ads.len() as f64) as usize;
                let cs = &self.ads[a].creatives;
                let k = (uniform(&[seed, s, i, 2]) * cs.len() as f64) as usize;
                (u, a, cs[k].index())
            })
            .collect()
    }

    /// Mean true CTR over a uniform sample of triples.
    pub fn mean_true_ctr(&self, seed: u64, n: u64) -> f64 {
        let t = self.sample_triples(seed, "world.mean_ctr", n);
        t.iter()
            .map(|&(u, a, c)| self.ctr_of(&self.users[u], &self.ads[a], &self.creatives[c]))
            .sum::<f64>()
            / n as f64
    }

    /// Relative CTR gain of always showing the best creative over a random
    /// one, over uniformly sampled (user, ad) pairs.
    pub fn oracle_creative_lift(&self, seed: u64, n: u64) -> f64 {
        let t = self.sample_triples(seed, "world.lift", n);
        let (mut best, mut mean) = (0.0, 0.0);
        for &(u, a, _) in &t {
            best += self.best_ad_ctr(&self.users[u], &self.ads[a]);
            mean += self.mean_ad_ctr(&self.users[u], &self.ads[a]);
        }
        best / mean - 1.0
    }

    /// Warm-up pass: each user sees random ads with random creatives and the
    /// last `sequence_len` clicked ads become the behavior sequence.
    fn fill_behavior(&mut self) {
        let seed = mix(&[self.config.seed, stream("world.warmup")]);
        let len = self.config.sequence_len;
        for ui in 0..self.users.len() {
            let mut seq: Vec<AdId> = Vec::new();
            for t in 0..self.config.warmup_impressions_per_user as u64 {
                let key = [seed, ui as u64, t];
                let a = (uniform(&[key[0], key[1], key[2], 0]) * self.ads.len() as f64) as usize;
                let ad = &self.ads[a];
                let k = (uniform(&[key[0], key[1], key[2], 1]) * ad.creatives.len() as f64) as usize;
                let c = &self.creatives[ad.creatives[k].index()];
                if uniform(&[key[0], key[1], key[2], 2]) < self.ctr_of(&self.users[ui], ad, c) {
                    seq.push(ad.id);
                }
            }
            let start = seq.len().saturating_sub(len);
            self.users[ui].behavior = seq.split_off(start);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.users.iter().enumerate() {
            if u.id.index() != i {
                return Err(Error::InvalidInput(format!("user at position {i} has id {}", u.id)));
            }
        }
        for (i, a) in self.ads.iter().enumerate() {
            if a.id.index() != i {
                return Err(Error::InvalidInput(format!("ad at position {i} has id {}", a.id)));
            }
            if a.creatives.is_empty() {
                return Err(Error::InvalidInput(format!("ad {} has no creatives", a.id)));
            }
            for c in &a.creatives {
                if self.creative(*c)?.ad != a.id {
                    return Err(Error::InvalidInput(format!("creative {c} listed under wrong ad {}", a.id)));
                }
            }
        }
        for (i, c) in self.creatives.iter().enumerate() {
            if c.id.index() != i {
                return Err(Error::InvalidInput(format!("creative at position {i} has id {}", c.id)));
            }
        }
        Ok(())
    }

    /// Line-delimited JSON: a header line followed by one line per user, ad
    /// and creative.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_jsonl_to(&mut w).map_err(|e| match e {
            Error::Json(j) if j.is_io() => Error::io(path, std::io::Error::other(j)),
            e => e,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_jsonl_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| Error::Json(serde_json::Error::io(e));
        let header = WorldLine::Header {
            config: self.config.clone(),
            base_logit: self.base_logit,
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for u in &self.users {
            serde_json::to_writer(&mut *w, &WorldLineRef::User(u))?;
            w.write_all(b"\n").map_err(io)?;
        }
        for a in &self.ads {
            serde_json::to_writer(&mut *w, &WorldLineRef::Ad(a))?;
            w.write_all(b"\n").map_err(io)?;
        }
        for c in &self.creatives {
            serde_json::to_writer(&mut *w, &WorldLineRef::Creative(c))?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<World> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = None;
        let (mut users, mut ads, mut creatives) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: WorldLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            match parsed {
                WorldLine::Header { config, base_logit } => header = Some((config, base_logit)),
                WorldLine::User(u) => users.push(u),
                WorldLine::Ad(a) => ads.push(a),
                WorldLine::Creative(c) => creatives.push(c),
            }
        }
        let (config, base_logit) = header.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "missing header line".into(),
        })?;
        let world = World {
            config,
            base_logit,
            users,
            ads,
            creatives,
        };
        world.validate()?;
        Ok(world)
    }
}

#[derive(Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WorldLine {
    Header { config: WorldConfig, base_logit: f64 },
    User(User),
    Ad(Ad),
    Creative(Creative),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WorldLineRef<'a> {
    User(&'a User),
    Ad(&'a Ad),
    Creative(&'a Creative),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::config::ForcedAd;

    fn small() -> WorldConfig {
        WorldConfig {
            num_users: 60,
            num_ads: 80,
            warmup_impressions_per_user: 200,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a, b);
        let mut c = small();
        c.seed += 1;
        assert_ne!(a, generate_world(&c).unwrap());
    }

    #[test]
    fn zero_scale_makes_creatives_equivalent() {
        let w = generate_world(&WorldConfig {
            creative_effect_scale: 0.0,
            ..small()
        })
        .unwrap();
        for u in w.users.iter().take(5) {
            for a in &w.ads {
                let first = w.true_ctr(u.id, a.id, a.creatives[0]).unwrap();
                for &c in &a.creatives {
                    assert_eq!(w.true_ctr(u.id, a.id, c).unwrap(), first);
                }
            }
        }
    }

    #[test]
    fn bundle_sizes_in_range() {
        let w = generate_world(&small()).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for a in &w.ads {
            assert!((2..=8).contains(&a.creatives.len()));
            seen.insert(a.creatives.len());
        }
        assert!(seen.len() >= 5, "heterogeneous sizes expected: {seen:?}");
    }

    #[test]
    fn zero_latents_give_logistic_of_base() {
        let mut w = generate_world(&small()).unwrap();
        w.base_logit = -2.0;
        w.users[0].latent.fill(0.0);
        w.ads[0].bias = 0.0;
        let c = w.ads[0].creatives[0];
        w.creatives[c.index()].effect = 0.0;
        w.creatives[c.index()].interaction = 0.0;
        let p = w.true_ctr(UserId(0), AdId(0), c).unwrap();
        assert!((p - sigmoid(-2.0)).abs() < 1e-15);
    }

    #[test]
    fn demographic_flip_reverses_creative_order() {
        let mut w = generate_world(&WorldConfig {
            creative_effect_scale: 0.5,
            ..small()
        })
        .unwrap();
        let ad = w.ads.iter().find(|a| a.creatives.len() >= 2).unwrap().clone();
        let (c1, c2) = (ad.creatives[0], ad.creatives[1]);
        for (c, inter) in [(c1, 1.0), (c2, -1.0)] {
            w.creatives[c.index()].effect = 0.0;
            w.creatives[c.index()].interaction = inter;
        }
        w.users[0].demo = 1;
        let p1 = w.true_ctr(UserId(0), ad.id, c1).unwrap();
        let p2 = w.true_ctr(UserId(0), ad.id, c2).unwrap();
        assert!(p1 > p2);
        w.users[0].demo = 0;
        let q1 = w.true_ctr(UserId(0), ad.id, c1).unwrap();
        let q2 = w.true_ctr(UserId(0), ad.id, c2).unwrap();
        assert!(q1 < q2);
    }

    #[test]
    fn monotone_in_creative_effect() {
        let mut w = generate_world(&small()).unwrap();
        let c = w.ads[3].creatives[0];
        let mut last = 0.0;
        for e in [-3.0, -1.0, 0.0, 0.5, 2.0, 6.0] {
            w.creatives[c.index()].effect = e;
            let p = w.true_ctr(UserId(1), AdId(3), c).unwrap();
            assert!(p > last && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn creative_of_other_ad_is_rejected() {
        let w = generate_world(&small()).unwrap();
        let foreign = w.ads[1].creatives[0];
        assert!(w.true_ctr(UserId(0), AdId(0), foreign).is_err());
        assert!(w.true_ctr(UserId(999), AdId(0), w.ads[0].creatives[0]).is_err());
    }

    #[test]
    fn forced_ctrs_are_exact() {
        let w = generate_world(&WorldConfig {
            num_users: 10,
            num_ads: 2,
            slots: 0,
            forced_ads: vec![
                ForcedAd { creative_ctrs: vec![0.2, 0.2], cpc: 1.0 },
                ForcedAd { creative_ctrs: vec![0.3, 0.3, 0.3], cpc: 1.0 },
            ],
            ..WorldConfig::default()
        })
        .unwrap();
        assert_eq!(w.ads[0].creatives.len(), 2);
        assert_eq!(w.ads[1].creatives.len(), 3);
        for u in &w.users {
            for a in &w.ads {
                for &c in &a.creatives {
                    let expected = if a.id == AdId(0) { 0.2 } else { 0.3 };
                    assert_eq!(w.true_ctr(u.id, a.id, c).unwrap(), expected);
                }
            }
        }
    }

    #[test]
    fn behavior_sequences_are_capped_clicked_ads() {
        let w = generate_world(&small()).unwrap();
        assert!(w.users.iter().all(|u| u.behavior.len() <= 20));
        assert!(w.users.iter().any(|u| !u.behavior.is_empty()));
        assert!(w.users.iter().all(|u| u.behavior.iter().all(|a| a.index() < w.ads.len())));
    }

    #[test]
    fn jsonl_round_trip() {
        let w = generate_world(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("world.jsonl");
        w.write_jsonl(&p).unwrap();
        let back = World::read_jsonl(&p).unwrap();
        assert_eq!(w, back);
        let mut bytes = Vec::new();
        back.write_jsonl_to(&mut bytes).unwrap();
        assert_eq!(bytes, std::fs::read(&p).unwrap());
    }
}
