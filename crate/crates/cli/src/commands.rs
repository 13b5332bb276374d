//! The five subcommands. Each writes its outputs and a manifest into the
//! output directory and returns the manifest.

use std::path::{Path, PathBuf};

use adcr_core::jac::{
    split_for_serving, train_on_log, ArModel, Checkpoint, CrModel, HistoricalCtr, JacModel, Trainable, TrainingCurve,
    TwoTower, GLOBAL_PRIOR_CTR,
};
use adcr_core::metrics::{evaluate, log_ctr};
use adcr_core::pipeline::{
    correlate_offline_online, plan_latency, run_experiment, served_random_log, write_json, write_reports_csv,
    write_reports_json, write_traces_csv, Architecture, ArchitecturePlan, Arm, CorrelationTable, ExperimentConfig,
    Models, NamedRanker, OracleAdScorer,
};
use adcr_core::record::{read_log, write_log};
use adcr_core::simworld::{generate_log, generate_world, NoisyOracleRanker, RandomRanker, WorldManifest};
use adcr_core::{CreativeRanker, ImpressionRecord, World};
use serde::{Deserialize, Serialize};

use crate::config::{sub_seed, CorrelateSection, LatencySection, ModelKind, RankerSpec, RunConfig};
use crate::manifest::RunManifest;
use crate::models::{LoadedAd, LoadedRanker};
use crate::plot::{bar_chart, xy_chart, Mark, Series};
use crate::{CliError, Result};

/// A resolved, validated config and where to write.
pub struct Ctx {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub plot: bool,
}

/// Input files and overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    /// World file; generated from the config when absent.
    pub world: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Replaces `eval.ranker`.
    pub ranker: Option<RankerSpec>,
}

impl Ctx {
    /// Resolves seeds, validates and creates the output directory.
    pub fn new(config: RunConfig, out_dir: impl Into<PathBuf>, plot: bool) -> Result<Self> {
        let config = config.resolve();
        config.validate()?;
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
        Ok(Self { config, out_dir, plot })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn world(&self, inputs: &Inputs, m: &mut RunManifest) -> Result<World> {
        match &inputs.world {
            Some(p) => {
                m.inputs.insert("world".into(), p.clone());
                Ok(World::read_jsonl(p)?)
            }
            None => Ok(generate_world(&self.config.world)?),
        }
    }

    fn read_log(&self, name: &str, path: PathBuf, m: &mut RunManifest) -> Result<Vec<ImpressionRecord>> {
        if !path.exists() {
            return Err(CliError::Config(format!("{name} log {} does not exist", path.display())));
        }
        let log = read_log(&path)?;
        m.inputs.insert(name.into(), path);
        Ok(log)
    }
}

fn artifact(m: &mut RunManifest, key: &str, file: &str) {
    m.artifacts.insert(key.into(), file.into());
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub impressions: usize,
    pub clicks: u64,
    pub ctr: f64,
}

impl LogSummary {
    pub fn of(log: &[ImpressionRecord]) -> Result<Self> {
        Ok(Self {
            impressions: log.len(),
            clicks: log.iter().map(|r| r.click as u64).sum(),
            ctr: log_ctr(log)?,
        })
    }
}

/// World file, world summary, training log and optional held-out log.
pub fn cmd_gen(ctx: &Ctx) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let mut m = RunManifest::new("gen", cfg);
    let world = generate_world(&cfg.world)?;
    world.write_jsonl(&ctx.path("world.jsonl"))?;
    artifact(&mut m, "world", "world.jsonl");
    WorldManifest::of(&world).write(&ctx.path("world_manifest.json"))?;
    artifact(&mut m, "world_manifest", "world_manifest.json");

    let policy = cfg.log.policy.policy();
    let log = generate_log(&world, &policy, cfg.log.impressions, cfg.log_seed())?;
    write_log(&ctx.path("log.jsonl"), &log)?;
    artifact(&mut m, "log", "log.jsonl");
    let mut summary = vec![("log", LogSummary::of(&log)?)];
    if cfg.log.holdout > 0 {
        let holdout = generate_log(&world, &policy, cfg.log.holdout, cfg.holdout_seed())?;
        write_log(&ctx.path("holdout.jsonl"), &holdout)?;
        artifact(&mut m, "holdout", "holdout.jsonl");
        summary.push(("holdout", LogSummary::of(&holdout)?));
    }
    let summary: std::collections::BTreeMap<_, _> = summary.into_iter().collect();
    write_json(&ctx.path("log_summary.json"), &summary)?;
    artifact(&mut m, "log_summary", "log_summary.json");
    m.write(&ctx.out_dir)?;
    Ok(m)
}

fn fit<M: Trainable + Checkpoint>(model: &mut M, world: &World, log: &[ImpressionRecord]) -> Result<TrainingCurve> {
    Ok(train_on_log(model, world, log)?)
}

/// Trains the configured model on the log and writes its checkpoints and
/// training curve. The joint model also yields the split serving towers
/// and the historical CTR table their bridge reads.
pub fn cmd_train(ctx: &Ctx, inputs: &Inputs) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let mut m = RunManifest::new("train", cfg);
    let world = ctx.world(inputs, &mut m)?;
    let log_path = inputs.log.clone().unwrap_or_else(|| ctx.path("log.jsonl"));
    let log = ctx.read_log("log", log_path, &mut m)?;
    let curve = match cfg.train.model {
        ModelKind::Jac => {
            let mut model = JacModel::new(&cfg.train.jac)?;
            let curve = fit(&mut model, &world, &log)?;
            model.save(&ctx.path("jac.ckpt"))?;
            artifact(&mut m, "jac", "jac.ckpt");
            let hist = HistoricalCtr::from_log(&log, GLOBAL_PRIOR_CTR);
            hist.write_json(&ctx.path("historical_ctr.json"))?;
            artifact(&mut m, "historical_ctr", "historical_ctr.json");
            let (ar, cr) = split_for_serving(&model, hist);
            ar.tower.save(&ctx.path("ar_plus.ckpt"))?;
            artifact(&mut m, "ar_plus", "ar_plus.ckpt");
            cr.tower.save(&ctx.path("cr_plus.ckpt"))?;
            artifact(&mut m, "cr_plus", "cr_plus.ckpt");
            curve
        }
        ModelKind::Ar => {
            let mut model = ArModel::new(&cfg.train.ar)?;
            let curve = fit(&mut model, &world, &log)?;
            model.save(&ctx.path("ar.ckpt"))?;
            artifact(&mut m, "ar", "ar.ckpt");
            curve
        }
        ModelKind::CrStandalone => {
            let mut model = CrModel::new(&cfg.train.cr)?;
            let curve = fit(&mut model, &world, &log)?;
            model.save(&ctx.path("cr.ckpt"))?;
            artifact(&mut m, "cr", "cr.ckpt");
            curve
        }
        ModelKind::TwoTower => {
            let mut model = TwoTower::new(&cfg.train.two_tower)?;
            let curve = fit(&mut model, &world, &log)?;
            model.save(&ctx.path("two_tower.ckpt"))?;
            artifact(&mut m, "two_tower", "two_tower.ckpt");
            curve
        }
    };
    curve.write_csv(&ctx.path("curve.csv"))?;
    artifact(&mut m, "curve", "curve.csv");
    if ctx.plot {
        let window = 10;
        let series = |name: &'static str, f: fn(&adcr_core::jac::CurvePoint) -> f64| Series {
            name,
            points: curve
                .window_means(window, f)
                .into_iter()
                .enumerate()
                .map(|(i, v)| ((i * window) as f64, v))
                .collect(),
        };
        xy_chart(
            &ctx.path("curve.svg"),
            "training loss (10-batch windows)",
            "batch",
            "mean loss",
            &[series("ad", |p| p.loss_ad), series("creative", |p| p.loss_cr)],
            Mark::Line,
        )?;
        artifact(&mut m, "curve_plot", "curve.svg");
    }
    m.write(&ctx.out_dir)?;
    Ok(m)
}

/// AUC, GAUC, sCTR and NSCTR of a ranker on a log. The log defaults to the
/// held-out log when present, else the training log.
pub fn cmd_eval(ctx: &Ctx, inputs: &Inputs) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let mut m = RunManifest::new("eval", cfg);
    let world = ctx.world(inputs, &mut m)?;
    let log_path = inputs.log.clone().unwrap_or_else(|| {
        let h = ctx.path("holdout.jsonl");
        if h.exists() {
            h
        } else {
            ctx.path("log.jsonl")
        }
    });
    let log = ctx.read_log("log", log_path, &mut m)?;
    let spec = inputs.ranker.clone().unwrap_or_else(|| cfg.eval.ranker.clone());
    if let RankerSpec::Checkpoint { path, .. } = &spec {
        m.inputs.insert("checkpoint".into(), path.clone());
    }
    m.config.eval.ranker = spec.clone();
    let loaded = LoadedRanker::load(&spec, &ctx.out_dir, &world, sub_seed(cfg.seed, "eval.ranker"))?;
    let ranker = loaded.ranker(&world, Some(&log))?;
    let report = evaluate(&log, ranker.as_ref(), cfg.eval.nsctr)?;
    write_json(&ctx.path("eval.json"), &report)?;
    artifact(&mut m, "report", "eval.json");
    m.write(&ctx.out_dir)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub architecture: Architecture,
    pub rt_ns: u64,
    pub rt_ms: f64,
}

/// Response time of each architecture under the latency section.
pub fn latency_table(l: &LatencySection) -> Result<Vec<LatencyRow>> {
    Architecture::ALL
        .iter()
        .map(|&a| {
            let rt = plan_latency(&ArchitecturePlan::new(a, l.costs(a)), l.m, l.n, l.l)?;
            Ok(LatencyRow {
                architecture: a,
                rt_ns: rt.0,
                rt_ms: rt.ms(),
            })
        })
        .collect()
}

/// Runs the configured arms on a shared request stream and writes the
/// per-arm reports and the analytic latency table.
pub fn cmd_simulate(ctx: &Ctx, inputs: &Inputs) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let mut m = RunManifest::new("simulate", cfg);
    let world = ctx.world(inputs, &mut m)?;
    let sim = &cfg.simulate;
    if sim.arms.is_empty() {
        return Err(CliError::field("simulate.arms", "no arms configured"));
    }
    // Arms with equal specs share one loaded model and the same seed, so
    // an A/A pair serves identical pages.
    let ranker_seed = sub_seed(cfg.seed, "simulate.ranker");
    let mut ads: Vec<(&crate::config::AdSpec, LoadedAd)> = Vec::new();
    let mut crs: Vec<(&RankerSpec, LoadedRanker)> = Vec::new();
    for arm in &sim.arms {
        if !ads.iter().any(|(s, _)| *s == &arm.ad) {
            ads.push((&arm.ad, LoadedAd::load(&arm.ad, &ctx.out_dir, &world)?));
        }
        if let Some(c) = &arm.creative {
            if !crs.iter().any(|(s, _)| *s == c) {
                crs.push((c, LoadedRanker::load(c, &ctx.out_dir, &world, ranker_seed)?));
            }
        }
    }
    let rankers: Vec<Box<dyn CreativeRanker + '_>> = crs
        .iter()
        .map(|(_, l)| l.ranker(&world, None))
        .collect::<Result<_>>()?;
    let mut arms = Vec::with_capacity(sim.arms.len());
    for (i, spec) in sim.arms.iter().enumerate() {
        let ad = &ads.iter().find(|(s, _)| *s == &spec.ad).expect("loaded").1;
        let creative = spec
            .creative
            .as_ref()
            .map(|c| rankers[crs.iter().position(|(s, _)| *s == c).expect("loaded")].as_ref());
        let models = Models {
            ad: ad.ad(),
            creative_aware_ad: ad.creative_aware(),
            creative,
        };
        models
            .check(spec.architecture)
            .map_err(|e| CliError::field(format!("simulate.arms[{i}]"), e))?;
        arms.push(Arm {
            name: &spec.name,
            plan: ArchitecturePlan::new(spec.architecture, spec.costs.unwrap_or(cfg.latency.costs(spec.architecture))),
            models,
        });
    }
    let out = run_experiment(&arms, &world, &sim.experiment)?;
    write_reports_json(&ctx.path("reports.json"), &out.reports)?;
    artifact(&mut m, "reports_json", "reports.json");
    write_reports_csv(&ctx.path("reports.csv"), &out.reports)?;
    artifact(&mut m, "reports_csv", "reports.csv");
    if sim.experiment.traces {
        write_traces_csv(&ctx.path("traces.csv"), &out.traces)?;
        artifact(&mut m, "traces", "traces.csv");
    }
    write_json(&ctx.path("latency.json"), &latency_table(&cfg.latency)?)?;
    artifact(&mut m, "latency", "latency.json");
    if ctx.plot {
        let bars: Vec<(String, f64)> = out.reports.iter().map(|r| (r.arm.clone(), r.ctr)).collect();
        bar_chart(&ctx.path("reports.svg"), "online CTR by arm", "CTR", &bars)?;
        artifact(&mut m, "reports_plot", "reports.svg");
    }
    m.write(&ctx.out_dir)?;
    Ok(m)
}

/// The correlation study on `world`: a replay log from a no-CR arm with
/// the true ad CTR, the section's noisy oracles against a random baseline,
/// and one online arm per ranker. `seed` keys the log, ranker noise and
/// baseline; the online experiment uses the section's own seed.
pub fn correlation_study(world: &World, section: &CorrelateSection, seed: u64) -> Result<CorrelationTable> {
    let exp = ExperimentConfig {
        num_requests: section.eval_requests,
        seed: sub_seed(seed, "correlate.eval"),
        ..section.analysis.experiment.clone()
    };
    let log = served_random_log(world, &OracleAdScorer, &exp)?;
    let noise_seed = sub_seed(seed, "correlate.rankers");
    let rankers: Vec<NoisyOracleRanker<'_>> = section
        .rankers
        .iter()
        .map(|p| NoisyOracleRanker::by_bundle_size(world, p.small.0, p.large.0, section.split, noise_seed))
        .collect();
    let named: Vec<NamedRanker<'_>> = section
        .rankers
        .iter()
        .zip(&rankers)
        .map(|(p, r)| NamedRanker::new(p.name.clone(), r))
        .collect();
    let base = RandomRanker {
        seed: sub_seed(seed, "correlate.baseline"),
    };
    Ok(correlate_offline_online(
        &named,
        &NamedRanker::new("random", &base),
        world,
        &log,
        &OracleAdScorer,
        &section.analysis,
    )?)
}

/// Offline-online correlation table as CSV and JSON.
pub fn cmd_correlate(ctx: &Ctx, inputs: &Inputs) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let mut m = RunManifest::new("correlate", cfg);
    let world = ctx.world(inputs, &mut m)?;
    let table = correlation_study(&world, &cfg.correlate, cfg.seed)?;
    table.write_csv(&ctx.path("correlation.csv"))?;
    artifact(&mut m, "table_csv", "correlation.csv");
    write_json(&ctx.path("correlation.json"), &table)?;
    artifact(&mut m, "table_json", "correlation.json");
    if ctx.plot {
        let pts = |f: fn(&adcr_core::pipeline::CorrelationRow) -> Option<f64>| -> Vec<(f64, f64)> {
            table.rows.iter().filter_map(|r| f(r).map(|x| (x, r.online_lift))).collect()
        };
        xy_chart(
            &ctx.path("correlation.svg"),
            "offline lift against online CTR lift",
            "offline lift",
            "online CTR lift",
            &[
                Series {
                    name: "sCTR",
                    points: pts(|r| r.sctr_lift),
                },
                Series {
                    name: "NSCTR",
                    points: pts(|r| r.nsctr_lift),
                },
            ],
            Mark::Points,
        )?;
        artifact(&mut m, "table_plot", "correlation.svg");
    }
    m.write(&ctx.out_dir)?;
    Ok(m)
}

/// Loads a config from a TOML file, a manifest JSON file (its recorded
/// config) or a preset.
pub fn load_config(config: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(CliError::Config("give either --config or --preset, not both".into())),
        (None, Some(p)) => crate::presets::preset(p),
        (None, None) => Ok(RunConfig::default()),
        (Some(path), None) => {
            if path.extension().is_some_and(|e| e == "json") {
                return Ok(RunManifest::read(path)?.config);
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}
