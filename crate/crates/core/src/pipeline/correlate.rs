use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{csv_err, run_experiment, ExperimentConfig};
use super::latency::{Architecture, ArchitecturePlan, StageCosts};
use super::scoring::AdScorer;
use super::serve::{Arm, Models};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, pearson, CreativeRanker, MetricReport, NsctrConfig};
use crate::record::ImpressionRecord;
use crate::simworld::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftKind {
    /// `x / baseline - 1`
    Relative,
    /// `x - baseline`
    Absolute,
}

impl LiftKind {
    pub fn apply(self, x: f64, base: f64) -> f64 {
        match self {
            LiftKind::Relative => x / base - 1.0,
            LiftKind::Absolute => x - base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateConfig {
    pub experiment: ExperimentConfig,
    /// Architecture of the online arms; every arm shares the ad scorer so
    /// only the creative choice differs.
    pub architecture: Architecture,
    pub nsctr: NsctrConfig,
    /// Lift of sCTR and NSCTR against the baseline ranker.
    pub replay_lift: LiftKind,
    /// Lift of AUC and GAUC against the baseline ranker.
    pub ranking_lift: LiftKind,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            architecture: Architecture::PostCr,
            nsctr: NsctrConfig::default(),
            replay_lift: LiftKind::Relative,
            ranking_lift: LiftKind::Absolute,
        }
    }
}

pub struct NamedRanker<'a> {
    pub name: String,
    pub ranker: &'a dyn CreativeRanker,
}

impl<'a> NamedRanker<'a> {
    pub fn new(name: impl Into<String>, ranker: &'a dyn CreativeRanker) -> Self {
        Self {
            name: name.into(),
            ranker,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub ranker: String,
    pub offline: MetricReport,
    pub sctr_lift: Option<f64>,
    pub nsctr_lift: Option<f64>,
    pub auc_lift: Option<f64>,
    pub gauc_lift: Option<f64>,
    pub online_ctr: f64,
    pub online_lift: f64,
    pub online_z: f64,
}

/// Pearson coefficient of one offline lift series against the online lift
/// series; `None` with a reason when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: String,
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub baseline: String,
    pub baseline_offline: MetricReport,
    pub baseline_online_ctr: f64,
    pub rows: Vec<CorrelationRow>,
    pub correlations: Vec<Correlation>,
}

impl CorrelationTable {
    pub fn pearson(&self, metric: &str) -> Option<f64> {
        self.correlations.iter().find(|c| c.metric == metric).and_then(|c| c.pearson)
    }

    /// One row per ranker, then one row per correlation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            "ranker", "sctr", "nsctr", "auc", "gauc", "sctr_lift", "nsctr_lift", "auc_lift", "gauc_lift",
            "online_ctr", "online_lift", "online_z",
        ])
        .map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.ranker.clone(),
                f(r.offline.sctr),
                f(r.offline.nsctr),
                f(r.offline.auc),
                f(r.offline.gauc),
                f(r.sctr_lift),
                f(r.nsctr_lift),
                f(r.auc_lift),
                f(r.gauc_lift),
                r.online_ctr.to_string(),
                r.online_lift.to_string(),
                r.online_z.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        for c in &self.correlations {
            w.write_record([format!("pearson:{}", c.metric), f(c.pearson), c.flag.clone().unwrap_or_default()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn lift(kind: LiftKind, x: Option<f64>, base: Option<f64>) -> Option<f64> {
    Some(kind.apply(x?, base?))
}

/// Impressions served by a no-CR arm under `ad_scorer`. Creatives on it are
/// uniformly random, which is the log replay metrics assume.
pub fn served_random_log(world: &World, ad_scorer: &dyn AdScorer, cfg: &ExperimentConfig) -> Result<Vec<ImpressionRecord>> {
    let arm = Arm {
        name: "no-cr",
        plan: ArchitecturePlan::new(Architecture::NoCr, StageCosts::default()),
        models: Models {
            ad: Some(ad_scorer),
            ..Models::default()
        },
    };
    let exp = ExperimentConfig {
        baseline: None,
        traces: false,
        keep_logs: true,
        ..cfg.clone()
    };
    Ok(run_experiment(&[arm], world, &exp)?.logs.remove(0))
}

/// Offline metrics of each ranker on `eval_log` and online CTR of an arm
/// serving it, both as lifts over `baseline`, and the Pearson coefficient
/// of each offline lift series against the online one.
pub fn correlate_offline_online(
    rankers: &[NamedRanker<'_>],
    baseline: &NamedRanker<'_>,
    world: &World,
    eval_log: &[ImpressionRecord],
    ad_scorer: &dyn AdScorer,
    cfg: &CorrelateConfig,
) -> Result<CorrelationTable> {
    if rankers.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least two rankers".into()));
    }
    if cfg.architecture == Architecture::NoCr || cfg.architecture == Architecture::PreCr {
        return Err(Error::config(
            "architecture",
            "online arms must rank creatives after or alongside a creative-unaware ad ranking",
        ));
    }
    let base_off = evaluate(eval_log, baseline.ranker, cfg.nsctr)?;
    let offline = rankers
        .iter()
        .map(|r| evaluate(eval_log, r.ranker, cfg.nsctr))
        .collect::<Result<Vec<_>>>()?;

    let plan = ArchitecturePlan::new(cfg.architecture, StageCosts::default());
    let mut named: Vec<(String, &dyn CreativeRanker)> = vec![(format!("baseline:{}", baseline.name), baseline.ranker)];
    named.extend(rankers.iter().map(|r| (r.name.clone(), r.ranker)));
    let arms: Vec<Arm<'_>> = named
        .iter()
        .map(|(n, r)| Arm {
            name: n,
            plan,
            models: Models {
                ad: Some(ad_scorer),
                creative_aware_ad: None,
                creative: Some(*r),
            },
        })
        .collect();
    let mut exp = cfg.experiment.clone();
    exp.baseline = None;
    exp.traces = false;
    exp.keep_logs = false;
    let online = run_experiment(&arms, world, &exp)?.reports;

    let rows: Vec<CorrelationRow> = rankers
        .iter()
        .zip(offline)
        .zip(&online[1..])
        .map(|((r, off), on)| {
            let l = on.lifts.as_ref().expect("lifts set");
            CorrelationRow {
                ranker: r.name.clone(),
                sctr_lift: lift(cfg.replay_lift, off.sctr, base_off.sctr),
                nsctr_lift: lift(cfg.replay_lift, off.nsctr, base_off.nsctr),
                auc_lift: lift(cfg.ranking_lift, off.auc, base_off.auc),
                gauc_lift: lift(cfg.ranking_lift, off.gauc, base_off.gauc),
                offline: off,
                online_ctr: on.ctr,
                online_lift: l.ctr,
                online_z: l.ctr_z,
            }
        })
        .collect();

    let online_lifts: Vec<f64> = rows.iter().map(|r| r.online_lift).collect();
    let series: [(&str, fn(&CorrelationRow) -> Option<f64>); 4] = [
        ("sctr", |r| r.sctr_lift),
        ("nsctr", |r| r.nsctr_lift),
        ("auc", |r| r.auc_lift),
        ("gauc", |r| r.gauc_lift),
    ];
    let correlations = series
        .iter()
        .map(|(metric, get)| {
            let xs: Option<Vec<f64>> = rows.iter().map(get).collect();
            let (pearson, flag) = match xs {
                None => (None, Some("metric undefined for some ranker".to_string())),
                Some(xs) => match pearson(&xs, &online_lifts) {
                    Ok(p) => (Some(p), None),
                    Err(e) => (None, Some(e.to_string())),
                },
            };
            Correlation {
                metric: metric.to_string(),
                pearson,
                flag,
            }
        })
        .collect();

    Ok(CorrelationTable {
        baseline: baseline.name.clone(),
        baseline_offline: base_off,
        baseline_online_ctr: online[0].ctr,
        rows,
        correlations,
    })
}
