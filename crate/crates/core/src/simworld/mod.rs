//! Synthetic users, ads and creatives with a known click model, and
//! impression-log generation under pluggable creative policies.

mod config;
mod log;
mod manifest;
mod world;

pub use config::{ForcedAd, WorldConfig, DEFAULT_CREATIVE_EFFECT_SCALE, MAX_CREATIVES_PER_AD};
pub use log::{
    ecpm, exhaustive_log, generate_log, CreativePolicy, NoisyOracleRanker, OracleRanker, PolicyKind,
    RandomRanker,
};
pub(crate) use log::pick;
pub use manifest::{calibrate_creative_scale, WorldManifest};
pub use world::{generate_world, Ad, Creative, User, World};
