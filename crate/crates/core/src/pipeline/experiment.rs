use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::latency::Architecture;
use super::serve::{click_uniform, make_request, run_request, Arm, ServeOptions};
use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};
use crate::record::ImpressionRecord;
use crate::simworld::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_requests: u64,
    pub seed: u64,
    /// Ads retrieved per request.
    pub retrieval_m: usize,
    /// Slots per page; `None` takes the world's `slots`.
    pub slots: Option<usize>,
    /// Candidate count the latency model charges for; see
    /// [`ServeOptions::latency_candidates`].
    pub latency_candidates: Option<u64>,
    /// Arm that lifts are computed against; the first arm when unset.
    pub baseline: Option<String>,
    /// Keep one trace row per served slot.
    pub traces: bool,
    /// Keep each arm's served impressions as a log.
    pub keep_logs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_requests: 100_000,
            seed: 1,
            retrieval_m: 100,
            slots: None,
            latency_candidates: Some(1000),
            baseline: None,
            traces: false,
            keep_logs: false,
        }
    }
}

/// Lifts of an arm against the baseline arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifts {
    pub baseline: String,
    /// Relative, e.g. 0.05 for +5%.
    pub ctr: f64,
    pub rpm: f64,
    pub rt_mean: f64,
    /// Paired z-score of the per-request click difference.
    pub ctr_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub arm: String,
    pub architecture: Architecture,
    pub requests: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub ctr: f64,
    pub rpm: f64,
    pub rt_mean_ms: f64,
    pub rt_p99_ms: f64,
    pub lifts: Option<Lifts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub request: u64,
    pub arm: String,
    pub user: UserId,
    pub slot: usize,
    pub ad: AdId,
    pub creative: CreativeId,
    pub pctr: f64,
    pub click: u8,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub reports: Vec<ExperimentReport>,
    pub traces: Vec<TraceRow>,
    /// Per arm, in arm order, when `keep_logs` is set.
    pub logs: Vec<Vec<ImpressionRecord>>,
}

#[derive(Default)]
struct Tally {
    impressions: u64,
    clicks: u64,
    revenue: f64,
    rt_ns: Vec<u64>,
    clicks_per_request: Vec<u32>,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean difference of paired counts over its standard error. Identical
/// series give 0.
pub fn paired_z(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    if var == 0.0 {
        return if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
    }
    mean / (var / n).sqrt()
}

fn relative(x: f64, base: f64) -> f64 {
    if base == 0.0 {
        if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x / base - 1.0
    }
}

/// Serves the same request stream to every arm. Clicks come from each
/// served pair's true CTR with a uniform keyed by (seed, request, ad), so
/// arms showing the same ad on the same request share the draw.
pub fn run_experiment(arms: &[Arm<'_>], world: &World, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if arms.is_empty() {
        return Err(Error::InvalidInput("experiment needs at least one arm".into()));
    }
    if cfg.num_requests == 0 {
        return Err(Error::config("num_requests", "must be positive"));
    }
    let l = cfg.slots.unwrap_or(world.config.slots);
    if l == 0 {
        return Err(Error::config("slots", "must be positive"));
    }
    let base = match &cfg.baseline {
        None => 0,
        Some(name) => arms
            .iter()
            .position(|a| a.name == name.as_str())
            .ok_or_else(|| Error::config("baseline", format!("no arm named `{name}`")))?,
    };
    for (i, a) in arms.iter().enumerate() {
        a.plan.validate()?;
        a.models.check(a.plan.architecture)?;
        if arms[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::config("arms", format!("duplicate arm name `{}`", a.name)));
        }
    }

    let opts = ServeOptions {
        slots: l,
        seed: cfg.seed,
        latency_candidates: cfg.latency_candidates,
    };
    let mut tallies: Vec<Tally> = arms.iter().map(|_| Tally::default()).collect();
    let mut out = ExperimentOutput {
        logs: if cfg.keep_logs { vec![Vec::new(); arms.len()] } else { Vec::new() },
        ..Default::default()
    };
    for r in 0..cfg.num_requests {
        let req = make_request(world, cfg.seed, r, cfg.retrieval_m)?;
        let user = world.user(req.user)?;
        for (ai, arm) in arms.iter().enumerate() {
            let page = run_request(arm, world, &req, &opts)?;
            let t = &mut tallies[ai];
            let mut clicks = 0u32;
            for (slot, s) in page.slots.iter().enumerate() {
                let ad = world.ad(s.ad)?;
                let p = world.ctr_of(user, ad, world.creative(s.creative)?);
                let click = (click_uniform(cfg.seed, r, s.ad) < p) as u8;
                clicks += click as u32;
                if click == 1 {
                    t.revenue += ad.cpc;
                }
                if cfg.traces {
                    out.traces.push(TraceRow {
                        request: r,
                        arm: arm.name.to_string(),
                        user: req.user,
                        slot,
                        ad: s.ad,
                        creative: s.creative,
                        pctr: s.pctr,
                        click,
                        rt_ms: page.rt.ms(),
                    });
                }
                if cfg.keep_logs {
                    out.logs[ai].push(ImpressionRecord {
                        user_id: req.user,
                        ad_id: s.ad,
                        shown_creative_id: s.creative,
                        candidate_creative_ids: ad.creatives.clone(),
                        click,
                        cpc_bid: ad.cpc,
                    });
                }
            }
            t.impressions += page.slots.len() as u64;
            t.clicks += clicks as u64;
            t.rt_ns.push(page.rt.0);
            t.clicks_per_request.push(clicks);
        }
    }

    let n = cfg.num_requests;
    let mut reports: Vec<ExperimentReport> = arms
        .iter()
        .zip(tallies.iter_mut())
        .map(|(arm, t)| {
            t.rt_ns.sort_unstable();
            let rt_sum: u128 = t.rt_ns.iter().map(|&v| v as u128).sum();
            ExperimentReport {
                arm: arm.name.to_string(),
                architecture: arm.plan.architecture,
                requests: n,
                impressions: t.impressions,
                clicks: t.clicks,
                ctr: if t.impressions == 0 { 0.0 } else { t.clicks as f64 / t.impressions as f64 },
                rpm: t.revenue / n as f64 * 1000.0,
                rt_mean_ms: rt_sum as f64 / n as f64 / 1e6,
                rt_p99_ms: percentile(&t.rt_ns, 0.99) as f64 / 1e6,
                lifts: None,
            }
        })
        .collect();
    let b = reports[base].clone();
    for (i, r) in reports.iter_mut().enumerate() {
        r.lifts = Some(Lifts {
            baseline: b.arm.clone(),
            ctr: relative(r.ctr, b.ctr),
            rpm: relative(r.rpm, b.rpm),
            rt_mean: relative(r.rt_mean_ms, b.rt_mean_ms),
            ctr_z: paired_z(&tallies[i].clicks_per_request, &tallies[base].clicks_per_request),
        });
    }
    out.reports = reports;
    Ok(out)
}

pub fn write_reports_json(path: &Path, reports: &[ExperimentReport]) -> Result<()> {
    write_json(path, reports)
}

/// One row per arm; lift columns are empty when absent.
pub fn write_reports_csv(path: &Path, reports: &[ExperimentReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "arm", "architecture", "requests", "impressions", "clicks", "ctr", "rpm", "rt_mean_ms", "rt_p99_ms",
        "baseline", "ctr_lift", "rpm_lift", "rt_lift", "ctr_z",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in reports {
        let l = r.lifts.as_ref();
        let opt = |f: fn(&Lifts) -> f64| l.map(|l| f(l).to_string()).unwrap_or_default();
        w.write_record([
            r.arm.clone(),
            r.architecture.to_string(),
            r.requests.to_string(),
            r.impressions.to_string(),
            r.clicks.to_string(),
            r.ctr.to_string(),
            r.rpm.to_string(),
            r.rt_mean_ms.to_string(),
            r.rt_p99_ms.to_string(),
            l.map(|l| l.baseline.clone()).unwrap_or_default(),
            opt(|l| l.ctr),
            opt(|l| l.rpm),
            opt(|l| l.rt_mean),
            opt(|l| l.ctr_z),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_traces_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Writes any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
