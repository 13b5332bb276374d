use crate::simworld::{ForcedAd, WorldConfig};

/// Ten ads, one slot. Ad 0 has a single creative at CTR 0.05; ad 1 averages
/// 0.045 over its two creatives but its better creative reaches 0.08. The
/// rest are filler at 0.001. A creative-blind ad ranking puts ad 0 first;
/// ranking ads by their best creative puts ad 1 first.
pub fn reorder_world_config() -> WorldConfig {
    let mut forced = vec![
        ForcedAd { creative_ctrs: vec![0.05], cpc: 1.0 },
        ForcedAd { creative_ctrs: vec![0.01, 0.08], cpc: 1.0 },
    ];
    forced.extend((0..8).map(|_| ForcedAd { creative_ctrs: vec![0.001, 0.001], cpc: 1.0 }));
    WorldConfig {
        num_users: 20,
        num_ads: forced.len(),
        slots: 1,
        warmup_impressions_per_user: 0,
        forced_ads: forced,
        ..WorldConfig::default()
    }
}
