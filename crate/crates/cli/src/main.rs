use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uamt::pipeline::{self, Arm, OutputLock, RunConfig};
use uamt::Error;

#[derive(Parser, Debug)]
#[command(name = "uamt", version, about = "Source-free adaptation of a BEV detector with pseudo-labels and an uncertainty-aware mean teacher")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Defaults to start from before the config file is applied.
    #[arg(long, global = true, value_enum, default_value = "full")]
    preset: Preset,
    /// Output directory (overrides io.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. --set adapt.alpha=0.99 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Use artifacts even when their config hash differs.
    #[arg(long, global = true)]
    force: bool,
    /// Train the plain mean teacher (unit loss weights).
    #[arg(long, global = true)]
    no_uncertainty: bool,
    /// Number of pseudo-label retraining rounds J.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Comma-separated confidence thresholds, one per round.
    #[arg(long, global = true, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    /// Monte-Carlo dropout passes T.
    #[arg(long, global = true)]
    mc_passes: Option<usize>,
    /// EMA keep ratio.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Transfer student weights to the teacher once per epoch.
    #[arg(long, global = true)]
    per_epoch_ema: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 50 epochs at batch 16 for every training stage.
    Full,
    /// 150 source epochs and 10 adaptation epochs at batch 4.
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source and target datasets.
    GenData,
    /// Train the source model.
    TrainSource {
        /// Train on labeled target scenes instead (analysis ceiling).
        #[arg(long)]
        oracle: bool,
    },
    /// Iterative pseudo-label generation.
    PseudoIter,
    /// Mean-teacher adaptation on the final pseudo-labels.
    Adapt,
    /// Evaluate every available model.
    Eval,
    /// Write the diagnostic CSVs and summary.
    Report,
    /// All stages, skipping those whose artifacts are current; trains both
    /// mean-teacher arms.
    Run,
    /// Print the resolved configuration as TOML.
    Config,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let base = match self.preset {
            Preset::Full => RunConfig::default(),
            Preset::Desk => RunConfig::desk(),
        };
        let mut cfg = RunConfig::load(self.config.as_deref(), base, &self.sets)?;
        if let Some(out) = &self.out {
            cfg.io.out_dir = out.clone();
        }
        let a = &mut cfg.adapt;
        if self.no_uncertainty {
            a.uncertainty = false;
        }
        if let Some(j) = self.iterations {
            a.iterations = j;
        }
        if let Some(d) = &self.delta {
            a.delta_schedule = d.clone();
        }
        if let Some(t) = self.mc_passes {
            a.mc_passes = t;
        }
        if let Some(al) = self.alpha {
            a.alpha = al;
        }
        if self.per_epoch_ema {
            a.per_epoch_ema = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { source, .. } => exit_code(source),
        Error::Config(_) => 2,
        Error::ArtifactMismatch { .. } => 4,
        _ => 3,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.common.resolve()?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let force = cli.common.force;
    let _lock = OutputLock::acquire(&cfg.io.out_dir)?;
    match &cli.command {
        Command::GenData => {
            let m = pipeline::gen_data(&cfg)?;
            for f in &m.files {
                println!("{}: {} scenes", f.name, f.scenes);
            }
        }
        Command::TrainSource { oracle } => {
            pipeline::train_source(&cfg, *oracle, force)?;
            println!("trained {} model", if *oracle { "oracle" } else { "source" });
        }
        Command::PseudoIter => {
            let rounds = pipeline::pseudo_iter(&cfg, force)?;
            for s in &rounds.label_sets {
                println!("iteration {}: {} labels at threshold {}", s.iteration, s.total(), s.threshold);
            }
        }
        Command::Adapt => {
            let out = pipeline::adapt(&cfg, force)?;
            println!("{} arm: {} steps", Arm::of(&cfg).name(), out.log.len());
        }
        Command::Eval => {
            for r in pipeline::eval(&cfg, force)? {
                println!("{:<22} {:<12} moderate AP {:.2}", r.model, r.eval_set, r.moderate_ap());
            }
        }
        Command::Report => print!("{}", pipeline::report(&cfg, force)?.summary),
        Command::Run => {
            let (rows, rep) = pipeline::run_pipeline(&cfg, &Arm::ALL)?;
            for r in rows {
                println!("{:<22} {:<12} moderate AP {:.2}", r.model, r.eval_set, r.moderate_ap());
            }
            print!("{}", rep.summary);
        }
        Command::Config => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
