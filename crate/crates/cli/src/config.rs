//! Run configuration: one TOML file with a top-level seed and one section
//! per subcommand. Every component seed is derived from the top-level seed
//! by name; seeds written inside sections are overwritten on resolve.

use std::fmt;
use std::path::PathBuf;

use adcr_core::jac::{ArModelConfig, CrModelConfig, JacConfig, TwoTowerConfig};
use adcr_core::metrics::NsctrConfig;
use adcr_core::pipeline::{Architecture, CorrelateConfig, ExperimentConfig, StageCosts};
use adcr_core::rng::{mix, stream};
use adcr_core::simworld::PolicyKind;
use adcr_core::WorldConfig;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// Seed of the component called `name`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    mix(&[seed, stream(name)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub log: LogSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub simulate: SimulateSection,
    pub latency: LatencySection,
    pub correlate: CorrelateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            world: WorldConfig::default(),
            log: LogSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            simulate: SimulateSection::default(),
            latency: LatencySection::default(),
            correlate: CorrelateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    /// Training log size.
    pub impressions: usize,
    /// Held-out log size; zero skips it.
    pub holdout: usize,
    pub policy: PolicyKind,
}

impl Default for LogSection {
    fn default() -> Self {
        Self {
            impressions: 1_000_000,
            holdout: 200_000,
            policy: PolicyKind::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Jac,
    Ar,
    CrStandalone,
    TwoTower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub model: ModelKind,
    pub jac: JacConfig,
    pub ar: ArModelConfig,
    pub cr: CrModelConfig,
    pub two_tower: TwoTowerConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            model: ModelKind::Jac,
            jac: JacConfig::default(),
            ar: ArModelConfig::default(),
            cr: CrModelConfig::default(),
            two_tower: TwoTowerConfig::default(),
        }
    }
}

/// Noise level of a noisy-oracle ranker. Infinite means a pure random
/// scorer and is written `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau(pub f64);

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Tau;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Tau, E> {
                if v.is_nan() || v < 0.0 {
                    return Err(E::custom(format!("tau must be >= 0, got {v}")));
                }
                Ok(Tau(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Tau, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Tau, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Tau, E> {
                match v {
                    "inf" => Ok(Tau(f64::INFINITY)),
                    _ => Err(E::custom(format!("expected \"inf\", got {v:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Source of creative scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RankerSpec {
    /// Independent uniform score per impression and creative.
    Random,
    /// True CTR.
    Oracle,
    NoisyOracle { tau: Tau },
    /// Scores the logged creative highest; only meaningful on a log.
    Shown,
    /// A trained model. `jac`, `cr-tower` and `cr` checkpoints rank with the
    /// creative tower (bridged towers read `historical`, by default
    /// `historical_ctr.json` beside the checkpoint); `two-tower` with
    /// cosine scores; `ar` and `ar-tower` with the ad score, ignoring the
    /// creative. Relative paths are under the output directory.
    Checkpoint {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        historical: Option<PathBuf>,
    },
}

/// Source of ad scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdSpec {
    /// Mean true CTR over the ad's creatives; creative-aware scoring uses
    /// the true CTR of the given creative.
    Oracle,
    /// `jac`, `ar` or `ar-tower` checkpoint.
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ranker: RankerSpec,
    pub nsctr: NsctrConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ranker: RankerSpec::Checkpoint {
                path: "jac.ckpt".into(),
                historical: None,
            },
            nsctr: NsctrConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub architecture: Architecture,
    #[serde(default = "oracle_ad")]
    pub ad: AdSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creative: Option<RankerSpec>,
    /// Stage costs; the `[latency]` entry for the architecture when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<StageCosts>,
}

fn oracle_ad() -> AdSpec {
    AdSpec::Oracle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub experiment: ExperimentConfig,
    pub arms: Vec<ArmSpec>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let ad = AdSpec::Checkpoint { path: "jac.ckpt".into() };
        let cr = RankerSpec::Checkpoint {
            path: "jac.ckpt".into(),
            historical: None,
        };
        Self {
            experiment: ExperimentConfig::default(),
            arms: vec![
                ArmSpec {
                    name: "no-cr".into(),
                    architecture: Architecture::NoCr,
                    ad: ad.clone(),
                    creative: None,
                    costs: None,
                },
                ArmSpec {
                    name: "post-cr+".into(),
                    architecture: Architecture::PostCr,
                    ad: ad.clone(),
                    creative: Some(cr.clone()),
                    costs: None,
                },
                ArmSpec {
                    name: "peri-cr+".into(),
                    architecture: Architecture::PeriCr,
                    ad,
                    creative: Some(cr),
                    costs: None,
                },
            ],
        }
    }
}

/// Latency model: candidate counts and per-architecture stage costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySection {
    /// Retrieved ads.
    pub m: u64,
    /// Creatives per ad.
    pub n: u64,
    /// Ad slots.
    pub l: u64,
    pub no_cr: StageCosts,
    pub post_cr: StageCosts,
    pub pre_cr: StageCosts,
    pub peri_cr: StageCosts,
}

fn costs(cr_fixed_ms: f64, cr_per_candidate_us: f64) -> StageCosts {
    StageCosts {
        retrieval_ms: 0.0,
        ar_ms: 90.0,
        cr_fixed_ms,
        cr_per_candidate_us,
        overhead_ms: 0.0,
    }
}

impl Default for LatencySection {
    fn default() -> Self {
        Self {
            m: 1000,
            n: 5,
            l: 4,
            no_cr: costs(0.0, 0.0),
            post_cr: costs(3.0, 50.0),
            pre_cr: costs(2.0, 3.0),
            peri_cr: costs(3.0, 5.0),
        }
    }
}

impl LatencySection {
    pub fn costs(&self, arch: Architecture) -> StageCosts {
        match arch {
            Architecture::NoCr => self.no_cr,
            Architecture::PostCr => self.post_cr,
            Architecture::PreCr => self.pre_cr,
            Architecture::PeriCr => self.peri_cr,
        }
    }
}

/// Noise levels of one noisy oracle: `small` on ads with at most `split`
/// creatives, `large` on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauPair {
    pub name: String,
    pub small: Tau,
    pub large: Tau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSection {
    /// Requests served by a no-CR arm to build the replay log.
    pub eval_requests: u64,
    pub split: usize,
    pub rankers: Vec<TauPair>,
    pub analysis: CorrelateConfig,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        let inf = Tau(f64::INFINITY);
        let pair = |name: &str, small, large| TauPair {
            name: name.into(),
            small: Tau(small),
            large: Tau(large),
        };
        Self {
            eval_requests: 400_000,
            split: 4,
            rankers: vec![
                TauPair {
                    name: "random".into(),
                    small: inf,
                    large: inf,
                },
                TauPair {
                    name: "oracle-small".into(),
                    small: Tau(0.0),
                    large: inf,
                },
                TauPair {
                    name: "oracle-large".into(),
                    small: inf,
                    large: Tau(0.0),
                },
                pair("sharp-small", 0.5, 2.0),
                pair("sharp-large", 2.0, 0.5),
                pair("oracle", 0.0, 0.0),
            ],
            analysis: CorrelateConfig {
                experiment: ExperimentConfig {
                    num_requests: 200_000,
                    ..ExperimentConfig::default()
                },
                ..CorrelateConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copies derived seeds into every section.
    pub fn resolve(mut self) -> Self {
        let s = self.seed;
        self.world.seed = sub_seed(s, "world");
        self.train.jac.seed = sub_seed(s, "train.model");
        self.train.ar.seed = sub_seed(s, "train.model");
        self.train.cr.seed = sub_seed(s, "train.model");
        self.train.two_tower.seed = sub_seed(s, "train.model");
        self.simulate.experiment.seed = sub_seed(s, "simulate");
        self.correlate.analysis.experiment.seed = sub_seed(s, "correlate.online");
        self
    }

    pub fn log_seed(&self) -> u64 {
        sub_seed(self.seed, "log")
    }

    pub fn holdout_seed(&self) -> u64 {
        sub_seed(self.seed, "holdout")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate()?;
        if self.log.impressions == 0 {
            return Err(CliError::field("log.impressions", "must be positive"));
        }
        if let PolicyKind::NoisyOracle { tau } = self.log.policy {
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(CliError::field("log.policy.tau", "must be finite and >= 0"));
            }
        }
        self.train.jac.validate()?;
        self.train.ar.train.validate()?;
        self.train.cr.train.validate()?;
        if self.train.cr.cr.bridge.is_some() {
            return Err(CliError::field("train.cr.cr.bridge", "the standalone creative model has no bridge"));
        }
        self.train.two_tower.train.validate()?;
        for (i, arm) in self.simulate.arms.iter().enumerate() {
            if arm.name.is_empty() {
                return Err(CliError::field(format!("simulate.arms[{i}].name"), "must not be empty"));
            }
            let needs_creative = arm.architecture != Architecture::NoCr;
            if needs_creative && arm.creative.is_none() {
                return Err(CliError::field(
                    format!("simulate.arms[{i}].creative"),
                    format!("{} needs a creative ranker", arm.architecture),
                ));
            }
            if let Some(c) = &arm.costs {
                c.to_ns()?;
            }
        }
        for arch in Architecture::ALL {
            self.latency.costs(arch).to_ns()?;
        }
        if self.latency.m == 0 || self.latency.n == 0 || self.latency.l == 0 {
            return Err(CliError::field("latency", "m, n and l must be positive"));
        }
        if self.correlate.rankers.len() < 2 {
            return Err(CliError::field("correlate.rankers", "need at least two rankers"));
        }
        if self.correlate.eval_requests == 0 {
            return Err(CliError::field("correlate.eval_requests", "must be positive"));
        }
        Ok(())
    }
}
