use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathprompt::augment::Strategy;
use pathprompt::config::RunConfig;
use pathprompt::eval::SplitKind;
use pathprompt::pipeline;
use pathprompt::prompt::Task;
use pathprompt::Error;

#[derive(Parser)]
#[command(name = "pathprompt", version, about = "Behavior-path prompting for candidate/job matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// pointwise or pairwise.
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Path prompts per sample.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// none, shuffle, selector or hybrid.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// random, ood-position or ood-jd.
    #[arg(long, global = true)]
    split: Option<SplitKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: profiles, jobs, interactions and labels.
    Synth,
    /// Build the vocabulary and the train/test prompt samples.
    Prepare {
        #[arg(long)]
        world: PathBuf,
    },
    /// Fine-tune adapters (and the selector) on prepared samples.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score the prepared test split with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Path-count ablation and path-ordering bias runs.
    Ablate,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(n) = self.paths {
            cfg.paths.max_paths = n;
        }
        if let Some(s) = self.strategy {
            cfg.train.strategy = s;
        }
        if let Some(k) = self.split {
            cfg.split.kind = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path, Error> {
        self.out.as_deref().ok_or_else(|| Error::InvalidConfig("--out is required".into()))
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = cli.overrides.resolve()?;
    let out = cli.overrides.out()?;
    match &cli.command {
        Command::Synth => println!("{}", pipeline::synth(&cfg, out)?),
        Command::Prepare { world } => println!("{}", pipeline::prepare(&cfg, world, out)?),
        Command::Train { data } => {
            let outcome = pipeline::train(&cfg, data, out)?;
            for e in &outcome.log {
                println!("epoch={} mean_loss={:.6}", e.epoch, e.mean_loss);
            }
            println!("final_loss={}", outcome.final_loss);
        }
        Command::Eval { checkpoint, data } => print!("{}", pipeline::eval(&cfg, checkpoint, data, out)?.report.summary()),
        Command::Ablate => print!("{}", pipeline::ablate(&cfg, out)?.summary()),
    }
    Ok(())
}

fn error_line(code: &str, message: &str) -> String {
    let flat = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    format!("error code={code} message={flat:?}")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", &e.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.code(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
