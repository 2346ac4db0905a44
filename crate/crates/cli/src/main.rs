mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtv_core::eval::ProtocolKind;
use mtv_core::numerics::Precision;

use commands::{Ctx, RunOptions};
use config::{parse_task, RunConfig};
use failure::Failure;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing argument, nothing to do)
  3  malformed or invalid config
  4  model fingerprint mismatch
  5  file read/write or file format error
  6  runtime error during computation
  7  a check did not pass (gradcheck)

Errors are printed to stderr as one line:
  error kind=<kind> code=<n> message=\"...\"";

/// Multimodal task vectors: mean activations, head search and patched
/// evaluation on a miniature transformer.
#[derive(Debug, Parser)]
#[command(name = "mtv", version = commands::VERSION, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a host model from a recipe and write a checkpoint.
    Train {
        /// Override the recipe's training steps.
        #[arg(long)]
        train_steps: Option<usize>,
        /// Finetune --model on zero-shot episodes of --task instead
        /// (2000 steps unless --train-steps is given).
        #[arg(long)]
        finetune: bool,
    },
    /// Compute every head's mean activation over N-shot episodes.
    MeanActs,
    /// Mean activations plus head search; writes the task-vector artifact.
    Extract,
    /// Evaluate protocols and write per-seed rows and a summary.
    Eval,
    /// Run an (N, T, S, seed) grid with the mtv protocol; resumable.
    Sweep,
    /// mtv against fv-mode, vtv-mode and k-shot rows on the same queries.
    Compare,
    /// Compare manual gradients with finite differences.
    Gradcheck,
    /// Exhaustive search over head subsets.
    Oracle,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed for every random choice (replaces the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    /// Model checkpoint (.mtvw).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Task label such as bijection-0, lookup-3, two-way-0, soft-class-1.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Shots per episode for the mean activations (N).
    #[arg(long = "n-shots", global = true)]
    n_shots: Option<usize>,
    /// Episodes averaged for the mean activations (T).
    #[arg(long = "n-calls", global = true)]
    n_calls: Option<usize>,
    /// Search steps (S).
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Comma-separated protocols: zero-shot, icl-k, mtv, mtv+k, fv-mode, vtv-mode, finetuned.
    #[arg(long, global = true, value_delimiter = ',')]
    protocols: Option<Vec<String>>,
    /// Precomputed artifact used by the mtv protocols.
    #[arg(long, global = true)]
    artifact: Option<PathBuf>,
    /// Finetuned model for the finetuned protocol.
    #[arg(long, global = true)]
    finetuned: Option<PathBuf>,
    /// Evaluation queries per seed.
    #[arg(long = "n-eval", global = true)]
    n_eval: Option<usize>,
    /// Output directory [default: $MTV_OUT_DIR, then ./out].
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Worker bound for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Record wall-clock columns (outputs are then no longer reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" | "32" => Ok(Precision::F32),
        "f64" | "64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got {s:?}")),
    }
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.model {
        cfg.model = Some(m.clone());
    }
    if let Some(t) = &common.task {
        let embed_dim = match &cfg.model {
            Some(p) if t.starts_with("soft-class") => mtv_core::model::load_weights::<f32>(p)
                .map(|m| m.config().embed_dim)
                .unwrap_or(mtv_core::ModelConfig::reference().embed_dim),
            _ => mtv_core::ModelConfig::reference().embed_dim,
        };
        cfg.task = parse_task(t, embed_dim)?;
    }
    if let Some(n) = common.n_shots {
        cfg.n_shots = n;
    }
    if let Some(t) = common.n_calls {
        cfg.n_calls = t;
    }
    if let Some(s) = common.steps {
        cfg.steps = s;
    }
    if let Some(ps) = &common.protocols {
        cfg.protocols = ps
            .iter()
            .map(|p| p.parse::<ProtocolKind>().map_err(|e| Failure::usage(e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    if let Some(a) = &common.artifact {
        cfg.artifact = Some(a.clone());
    }
    if let Some(f) = &common.finetuned {
        cfg.finetuned = Some(f.clone());
    }
    if let Some(n) = common.n_eval {
        cfg.n_eval = n;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if let Some(p) = common.precision {
        cfg.precision = p;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &common.seeds {
        cfg.seeds = s.clone();
    }
    if let Command::Train { train_steps, finetune: false } = command {
        let mut recipe = cfg.recipe.take().unwrap_or_else(mtv_core::trainer::reference_recipe);
        if let Some(n) = train_steps {
            recipe.train.steps = *n;
        }
        if let Some(s) = common.seed {
            recipe.init_seed = s;
            recipe.train.seed = s;
        }
        if let Some(p) = common.precision {
            recipe.train.precision = p;
        }
        cfg.precision = recipe.train.precision;
        cfg.recipe = Some(recipe);
    }
    cfg.resolve_out_dir();
    cfg.validate()?;
    Ok(cfg)
}

macro_rules! dispatch {
    ($f:ident, $ctx:expr) => {
        match $ctx.cfg.precision {
            Precision::F32 => commands::$f::<f32>($ctx),
            Precision::F64 => commands::$f::<f64>($ctx),
        }
    };
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.common.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let cfg = resolve(&cli.common, &cli.command)?;
    let name = match cli.command {
        Command::Train { .. } => "train",
        Command::MeanActs => "mean-acts",
        Command::Extract => "extract",
        Command::Eval => "eval",
        Command::Sweep => "sweep",
        Command::Compare => "compare",
        Command::Gradcheck => "gradcheck",
        Command::Oracle => "oracle",
    };
    let ctx = Ctx {
        command: name,
        cfg,
        opts: RunOptions {
            jobs: cli.common.jobs,
            timing: cli.common.timing,
            finetune: match cli.command {
                Command::Train { finetune: true, train_steps } => Some(train_steps.unwrap_or(2000)),
                _ => None,
            },
        },
    };
    let ctx = &ctx;
    match cli.command {
        Command::Train { .. } => dispatch!(train_cmd, ctx),
        Command::MeanActs => dispatch!(mean_acts_cmd, ctx),
        Command::Extract => dispatch!(extract_cmd, ctx),
        Command::Eval => dispatch!(eval_cmd, ctx),
        Command::Sweep => dispatch!(sweep_cmd, ctx),
        Command::Compare => dispatch!(compare_cmd, ctx),
        Command::Gradcheck => commands::gradcheck_cmd(ctx),
        Command::Oracle => dispatch!(oracle_cmd, ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let f = Failure::usage(first);
            eprintln!("{f}");
            return f.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
