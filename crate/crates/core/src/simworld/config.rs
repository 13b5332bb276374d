use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ad whose click-through rates are pinned rather than drawn from the
/// latent model. Used for hand-built scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedAd {
    /// One true CTR per creative; the length sets the bundle size.
    pub creative_ctrs: Vec<f64>,
    #[serde(default = "default_cpc")]
    pub cpc: f64,
}

fn default_cpc() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_users: usize,
    pub num_ads: usize,
    /// Creative bundle sizes are uniform over `creatives_min..=creatives_max`.
    pub creatives_min: usize,
    pub creatives_max: usize,
    /// Ad slots per page (L).
    pub slots: usize,
    pub latent_dim: usize,
    pub age_buckets: u32,
    pub regions: u32,
    pub categories: u32,
    pub styles: u32,
    pub formats: u32,
    /// Per-component std of the attribute embeddings summed into user latents.
    pub user_latent_scale: f64,
    pub ad_latent_scale: f64,
    pub ad_bias_std: f64,
    /// Creative effect scale (sigma_c). Zero removes every creative effect.
    pub creative_effect_scale: f64,
    pub style_effect_std: f64,
    pub format_effect_std: f64,
    pub creative_idiosyncratic_std: f64,
    /// Std of the style x demographic interaction, before sigma_c.
    pub interaction_std: f64,
    /// Mean true CTR the base logit is calibrated to, when not given.
    pub target_ctr: f64,
    pub base_logit: Option<f64>,
    pub cpc_log_mean: f64,
    pub cpc_log_std: f64,
    pub sequence_len: usize,
    pub warmup_impressions_per_user: usize,
    pub forced_ads: Vec<ForcedAd>,
}

/// Largest creative bundle the world generator accepts.
pub const MAX_CREATIVES_PER_AD: usize = 20;

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_users: 500,
            num_ads: 500,
            creatives_min: 2,
            creatives_max: 8,
            slots: 4,
            latent_dim: 8,
            age_buckets: 8,
            regions: 16,
            categories: 20,
            styles: 12,
            formats: 4,
            user_latent_scale: 0.25,
            ad_latent_scale: 0.35,
            ad_bias_std: 0.4,
            creative_effect_scale: DEFAULT_CREATIVE_EFFECT_SCALE,
            style_effect_std: 1.0,
            format_effect_std: 0.5,
            creative_idiosyncratic_std: 0.4,
            interaction_std: 0.8,
            target_ctr: 0.024,
            base_logit: None,
            cpc_log_mean: 0.0,
            cpc_log_std: 0.5,
            sequence_len: 20,
            warmup_impressions_per_user: 400,
            forced_ads: Vec::new(),
        }
    }
}

/// Scale at which always showing the best creative lifts the CTR of served
/// pages by 10%, averaged over default worlds with seeds 1 to 8. See
/// `pipeline::calibrate_served_creative_scale`.
pub const DEFAULT_CREATIVE_EFFECT_SCALE: f64 = 0.074;

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let forced = !self.forced_ads.is_empty();
        if self.num_users == 0 {
            return Err(Error::config("num_users", "must be at least 1"));
        }
        if self.num_ads == 0 {
            return Err(Error::config("num_ads", "must be at least 1"));
        }
        if forced {
            if self.forced_ads.len() != self.num_ads {
                return Err(Error::config(
                    "forced_ads",
                    format!("{} forced ads but num_ads = {}", self.forced_ads.len(), self.num_ads),
                ));
            }
            for (i, ad) in self.forced_ads.iter().enumerate() {
                let n = ad.creative_ctrs.len();
                if n == 0 || n > MAX_CREATIVES_PER_AD {
                    return Err(Error::config(
                        format!("forced_ads[{i}].creative_ctrs"),
                        format!("length {n} outside [1, {MAX_CREATIVES_PER_AD}]"),
                    ));
                }
                if let Some(p) = ad.creative_ctrs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                    return Err(Error::config(
                        format!("forced_ads[{i}].creative_ctrs"),
                        format!("{p} is not in (0, 1)"),
                    ));
                }
                if !(ad.cpc.is_finite() && ad.cpc >= 0.0) {
                    return Err(Error::config(format!("forced_ads[{i}].cpc"), "must be finite and >= 0"));
                }
            }
        } else {
            if self.creatives_min == 0 || self.creatives_max > MAX_CREATIVES_PER_AD {
                return Err(Error::config(
                    "creatives_min/creatives_max",
                    format!("bundle sizes must lie in [1, {MAX_CREATIVES_PER_AD}]"),
                ));
            }
            if self.creatives_min > self.creatives_max {
                return Err(Error::config("creatives_min", "exceeds creatives_max"));
            }
        }
        if self.slots > self.num_ads / 10 {
            return Err(Error::config(
                "slots",
                format!("{} slots need at least {} ads (L <= M/10)", self.slots, self.slots * 10),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be at least 1"));
        }
        for (name, v) in [
            ("age_buckets", self.age_buckets),
            ("regions", self.regions),
            ("categories", self.categories),
            ("styles", self.styles),
            ("formats", self.formats),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("user_latent_scale", self.user_latent_scale),
            ("ad_latent_scale", self.ad_latent_scale),
            ("ad_bias_std", self.ad_bias_std),
            ("creative_effect_scale", self.creative_effect_scale),
            ("style_effect_std", self.style_effect_std),
            ("format_effect_std", self.format_effect_std),
            ("creative_idiosyncratic_std", self.creative_idiosyncratic_std),
            ("interaction_std", self.interaction_std),
            ("cpc_log_std", self.cpc_log_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.target_ctr > 0.0 && self.target_ctr < 1.0) {
            return Err(Error::config("target_ctr", "must lie in (0, 1)"));
        }
        if let Some(b) = self.base_logit {
            if !b.is_finite() {
                return Err(Error::config("base_logit", "must be finite"));
            }
        }
        if !self.cpc_log_mean.is_finite() {
            return Err(Error::config("cpc_log_mean", "must be finite"));
        }
        Ok(())
    }
}
