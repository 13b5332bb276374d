use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where creative ranking sits relative to ad ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// No creative ranking; each ad shows a random creative.
    NoCr,
    /// Creatives ranked only for the L ads that survive ad ranking.
    PostCr,
    /// Creatives ranked for every candidate first, then a creative-aware
    /// ad ranking.
    PreCr,
    /// Creative ranking for every candidate runs alongside ad ranking.
    PeriCr,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::NoCr, Self::PostCr, Self::PreCr, Self::PeriCr];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoCr => "no-cr",
            Self::PostCr => "post-cr",
            Self::PreCr => "pre-cr",
            Self::PeriCr => "peri-cr",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Response time in whole nanoseconds, so stage sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nanos(pub u64);

impl Nanos {
    pub fn ms(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

/// Per-stage costs. Millisecond and microsecond inputs must be whole
/// numbers of nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageCosts {
    pub retrieval_ms: f64,
    /// Ad ranking over the whole candidate set.
    pub ar_ms: f64,
    pub cr_fixed_ms: f64,
    pub cr_per_candidate_us: f64,
    pub overhead_ms: f64,
}

impl Default for StageCosts {
    fn default() -> Self {
        Self {
            retrieval_ms: 0.0,
            ar_ms: 90.0,
            cr_fixed_ms: 3.0,
            cr_per_candidate_us: 5.0,
            overhead_ms: 0.0,
        }
    }
}

fn to_nanos(field: &str, value: f64, per_unit: f64) -> Result<u64> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::config(field, format!("must be finite and >= 0, got {value}")));
    }
    let ns = value * per_unit;
    let rounded = ns.round();
    if (ns - rounded).abs() > (ns * 1e-12).max(1e-6) || rounded > 1e15 {
        return Err(Error::config(field, format!("{value} is not a whole number of nanoseconds")));
    }
    Ok(rounded as u64)
}

/// Stage costs converted to nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostsNs {
    pub retrieval: u64,
    pub ar: u64,
    pub cr_fixed: u64,
    pub cr_per_candidate: u64,
    pub overhead: u64,
}

impl StageCosts {
    pub fn to_ns(&self) -> Result<CostsNs> {
        Ok(CostsNs {
            retrieval: to_nanos("retrieval_ms", self.retrieval_ms, 1e6)?,
            ar: to_nanos("ar_ms", self.ar_ms, 1e6)?,
            cr_fixed: to_nanos("cr_fixed_ms", self.cr_fixed_ms, 1e6)?,
            cr_per_candidate: to_nanos("cr_per_candidate_us", self.cr_per_candidate_us, 1e3)?,
            overhead: to_nanos("overhead_ms", self.overhead_ms, 1e6)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitecturePlan {
    pub architecture: Architecture,
    #[serde(default)]
    pub costs: StageCosts,
}

impl ArchitecturePlan {
    pub fn new(architecture: Architecture, costs: StageCosts) -> Self {
        Self { architecture, costs }
    }

    pub fn validate(&self) -> Result<()> {
        self.costs.to_ns().map(|_| ())
    }

    /// Response time given how many creatives the creative stage scores:
    /// `all` for every retrieved candidate, `survivors` for the ads kept
    /// after ad ranking.
    pub fn request_latency(&self, all: u64, survivors: u64) -> Result<Nanos> {
        let c = self.costs.to_ns()?;
        let cr = |n: u64| -> Result<u64> {
            n.checked_mul(c.cr_per_candidate)
                .and_then(|v| v.checked_add(c.cr_fixed))
                .ok_or_else(|| Error::InvalidInput("creative stage cost overflows".into()))
        };
        let stages = match self.architecture {
            Architecture::NoCr => c.ar,
            Architecture::PostCr => c.ar + cr(survivors)?,
            Architecture::PreCr => cr(all)? + c.ar,
            Architecture::PeriCr => c.ar.max(cr(all)?),
        };
        Ok(Nanos(c.retrieval + stages + c.overhead))
    }
}

/// Response time for `m` candidates with `n` creatives each and `l` slots.
pub fn plan_latency(plan: &ArchitecturePlan, m: u64, n: u64, l: u64) -> Result<Nanos> {
    if m == 0 || n == 0 || l == 0 {
        return Err(Error::InvalidInput(format!("counts must be positive, got m={m} n={n} l={l}")));
    }
    let all = m.checked_mul(n).ok_or_else(|| Error::InvalidInput("m * n overflows".into()))?;
    plan.request_latency(all, l.min(m) * n)
}
