//! Named configurations shipped with the binary.

use crate::config::RunConfig;
use crate::CliError;

pub const PRESETS: [(&str, &str); 3] = [
    ("default-world", include_str!("../presets/default-world.toml")),
    ("counterexample", include_str!("../presets/counterexample.toml")),
    ("table1-latency", include_str!("../presets/table1-latency.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// The preset's TOML text.
pub fn source(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset `{name}`; available: {}",
                names().collect::<Vec<_>>().join(", ")
            ))
        })
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    RunConfig::from_toml(source(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use adcr_core::pipeline::{plan_latency, Architecture, ArchitecturePlan};

    #[test]
    fn every_preset_parses_and_validates() {
        for name in names() {
            let c = preset(name).unwrap().resolve();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset_lists_the_known_ones() {
        let e = preset("nope").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("table1-latency"));
    }

    #[test]
    fn table1_preset_matches_the_built_in_latency_defaults() {
        let c = preset("table1-latency").unwrap();
        assert_eq!(c.latency, RunConfig::default().latency);
        let l = &c.latency;
        let rt = |a| plan_latency(&ArchitecturePlan::new(a, l.costs(a)), l.m, l.n, l.l).unwrap().ms();
        assert_eq!(rt(Architecture::PeriCr), 90.0);
    }

    #[test]
    fn counterexample_world_pins_two_ads() {
        let c = preset("counterexample").unwrap();
        let ctrs: Vec<Vec<f64>> = c.world.forced_ads.iter().map(|a| a.creative_ctrs.clone()).collect();
        assert_eq!(ctrs, vec![vec![0.2; 2], vec![0.3; 3]]);
    }
}
