//! Hashed feature ids drawn from world attributes.

use crate::ids::{AdId, CreativeId, UserId};
use crate::nnet::hash_feature;
use crate::simworld::World;
use crate::error::Result;

fn pair(a: u64, b: u64) -> u64 {
    (a << 32) | b
}

/// Inputs to the ad tower: one id per embedded field plus the behavior
/// sequence, attended with the ad-id embedding as query.
#[derive(Debug, Clone, PartialEq)]
pub struct ArInput {
    pub fields: Vec<u64>,
    /// Index into `fields` of the attention query (the target ad id).
    pub target_field: usize,
    pub behavior: Vec<u64>,
}

pub fn ad_id_feature(ad: AdId) -> u64 {
    hash_feature("ad_id", ad.0 as u64)
}

pub const AR_FIELDS: usize = 9;
pub const AR_CREATIVE_FIELDS: usize = 3;

pub fn ar_input(world: &World, user: UserId, ad: AdId, creative: Option<CreativeId>) -> Result<ArInput> {
    let u = world.user(user)?;
    let a = world.ad(ad)?;
    let cat = a.category as u64;
    let demo = u.demo as u64;
    let mut fields = vec![
        hash_feature("user_id", u.id.0 as u64),
        hash_feature("age", u.age as u64),
        hash_feature("region", u.region as u64),
        hash_feature("demo", demo),
        ad_id_feature(ad),
        hash_feature("category", cat),
        hash_feature("age_x_category", pair(u.age as u64, cat)),
        hash_feature("region_x_category", pair(u.region as u64, cat)),
        hash_feature("demo_x_category", pair(demo, cat)),
    ];
    if let Some(c) = creative {
        let c = world.creative(c)?;
        fields.push(hash_feature("creative_id", c.id.0 as u64));
        fields.push(hash_feature("style", c.style as u64));
        fields.push(hash_feature("demo_x_style", pair(demo, c.style as u64)));
    }
    Ok(ArInput {
        fields,
        target_field: 4,
        behavior: u.behavior.iter().map(|&b| ad_id_feature(b)).collect(),
    })
}

pub const CR_FIELDS: usize = 9;

/// Creative-tower fields. Only the demographic bit and age bucket of the
/// user enter, so scores can be tabulated per (demo, age) profile.
pub fn cr_fields(world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<Vec<u64>> {
    let u = world.user(user)?;
    Ok(cr_fields_for_profile(world, u.demo, u.age, ad, creative)?)
}

pub fn cr_fields_for_profile(world: &World, demo: u8, age: u32, ad: AdId, creative: CreativeId) -> Result<Vec<u64>> {
    let a = world.ad(ad)?;
    let c = world.creative(creative)?;
    let demo = demo as u64;
    Ok(vec![
        hash_feature("cr.demo", demo),
        hash_feature("cr.age", age as u64),
        hash_feature("cr.category", a.category as u64),
        hash_feature("cr.ad_id", ad.0 as u64),
        hash_feature("cr.creative_id", c.id.0 as u64),
        hash_feature("cr.style", c.style as u64),
        hash_feature("cr.format", c.format as u64),
        hash_feature("cr.demo_x_style", pair(demo, c.style as u64)),
        hash_feature("cr.age_x_style", pair(age as u64, c.style as u64)),
    ])
}

/// Two-tower inputs: (user side, ad-creative side).
pub fn two_tower_fields(world: &World, user: UserId, ad: AdId, creative: CreativeId) -> Result<(Vec<u64>, Vec<u64>)> {
    Ok((tt_user_fields(world, user)?, tt_item_fields(world, ad, creative)?))
}

pub fn tt_user_fields(world: &World, user: UserId) -> Result<Vec<u64>> {
    let u = world.user(user)?;
    Ok(vec![
        hash_feature("tt.user_id", u.id.0 as u64),
        hash_feature("tt.demo", u.demo as u64),
        hash_feature("tt.age", u.age as u64),
        hash_feature("tt.region", u.region as u64),
    ])
}

pub fn tt_item_fields(world: &World, ad: AdId, creative: CreativeId) -> Result<Vec<u64>> {
    let a = world.ad(ad)?;
    let c = world.creative(creative)?;
    Ok(vec![
        hash_feature("tt.ad_id", ad.0 as u64),
        hash_feature("tt.category", a.category as u64),
        hash_feature("tt.creative_id", c.id.0 as u64),
        hash_feature("tt.style", c.style as u64),
        hash_feature("tt.format", c.format as u64),
    ])
}
