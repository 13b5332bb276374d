use std::path::PathBuf;
use std::process::ExitCode;

use adcr_cli::commands::load_config;
use adcr_cli::config::RankerSpec;
use adcr_cli::{cmd_correlate, cmd_eval, cmd_gen, cmd_simulate, cmd_train, CliError, Ctx, Inputs, RunManifest};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adcr", version, about = "Ad and creative ranking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and impression logs.
    Gen(Common),
    /// Train a model on a log.
    Train(Common),
    /// Offline metrics of a creative ranker on a log.
    Eval(EvalArgs),
    /// Online A/B simulation of serving architectures.
    Simulate(Common),
    /// Offline-online correlation study.
    Correlate(Common),
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest JSON file to replay.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in config preset.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short, default_value = "out")]
    out_dir: PathBuf,
    /// Also write SVG charts.
    #[arg(long)]
    plot: bool,
    /// World file instead of generating from the config.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Impression log (defaults to the one in the output directory).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate, overriding `eval.ranker`.
    #[arg(long, conflicts_with = "ranker")]
    checkpoint: Option<PathBuf>,
    /// Built-in ranker: random, oracle or shown.
    #[arg(long)]
    ranker: Option<String>,
}

fn setup(c: &Common) -> Result<(Ctx, Inputs), CliError> {
    let mut cfg = load_config(c.config.as_deref(), c.preset.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let ctx = Ctx::new(cfg, &c.out_dir, c.plot)?;
    let inputs = Inputs {
        world: c.world.clone(),
        log: c.log.clone(),
        ranker: None,
    };
    Ok((ctx, inputs))
}

fn ranker_override(e: &EvalArgs) -> Result<Option<RankerSpec>, CliError> {
    if let Some(p) = &e.checkpoint {
        return Ok(Some(RankerSpec::Checkpoint {
            path: std::path::absolute(p).unwrap_or_else(|_| p.clone()),
            historical: None,
        }));
    }
    Ok(match e.ranker.as_deref() {
        None => None,
        Some("random") => Some(RankerSpec::Random),
        Some("oracle") => Some(RankerSpec::Oracle),
        Some("shown") => Some(RankerSpec::Shown),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown ranker `{other}` (expected random, oracle or shown)"
            )))
        }
    })
}

fn run(cli: Cli) -> Result<Option<RunManifest>, CliError> {
    Ok(Some(match cli.command {
        Command::Gen(c) => cmd_gen(&setup(&c)?.0)?,
        Command::Train(c) => {
            let (ctx, inputs) = setup(&c)?;
            cmd_train(&ctx, &inputs)?
        }
        Command::Eval(e) => {
            let (ctx, mut inputs) = setup(&e.common)?;
            inputs.ranker = ranker_override(&e)?;
            cmd_eval(&ctx, &inputs)?
        }
        Command::Simulate(c) => {
            let (ctx, inputs) = setup(&c)?;
            cmd_simulate(&ctx, &inputs)?
        }
        Command::Correlate(c) => {
            let (ctx, inputs) = setup(&c)?;
            cmd_correlate(&ctx, &inputs)?
        }
        Command::Presets { name: None } => {
            for n in adcr_cli::presets::names() {
                println!("{n}");
            }
            return Ok(None);
        }
        Command::Presets { name: Some(n) } => {
            print!("{}", adcr_cli::presets::source(&n)?);
            return Ok(None);
        }
    }))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Some(m)) => {
            println!("{}", m.to_json());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
