use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use warn::config::{load_config, RunConfig};
use warn::error::{Result, WarnError};
use warn::{checkpoint, cli};
use warn_core::attention::GateMode;

/// Gated-attention CNN experiments: dataset generation, training,
/// evaluation, ablations, distractor sweeps and mask export.
#[derive(Parser)]
#[command(name = "warn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; every key has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Gates {
    Learned,
    Uniform,
    NetOnly,
    ModulesOnly,
}

impl From<Gates> for GateMode {
    fn from(g: Gates) -> Self {
        match g {
            Gates::Learned => GateMode::Learned,
            Gates::Uniform => GateMode::Uniform,
            Gates::NetOnly => GateMode::NetOnly,
            Gates::ModulesOnly => GateMode::ModulesOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cluttered dataset splits into `data.cache_dir`.
    Generate(ConfigArgs),
    /// Train one model; writes config.toml, metrics.csv, timing.csv and
    /// best.ckpt into `output.dir`.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the configured data.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "learned")]
        gates: Gates,
    },
    /// Train every cell of the `[ablation]` grid; writes ablation.csv.
    Ablate(ConfigArgs),
    /// Evaluate a checkpoint on test sets regenerated with each distractor
    /// count of `sweep.distractors`; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write attention masks and overlays as PGM files.
    ExportMasks {
        #[arg(long)]
        checkpoint: PathBuf,
        /// IDX file of u8 images, `[N,H,W]` or `[N,C,H,W]`.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export at most this many images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Finite-difference check of the full model gradient in 64-bit.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let cfg = a.load()?;
            for (split, path) in cli::generate(&cfg)? {
                println!("{}: {}", split, path.display());
            }
        }
        Command::Train(a) => {
            let cfg = a.load()?;
            let r = cli::train(&cfg)?;
            println!(
                "best epoch {} val_acc {:.4} test_acc {:.4}",
                r.best_epoch,
                r.best_val_acc,
                r.test.accuracy()
            );
        }
        Command::Eval {
            cfg,
            checkpoint,
            split,
            gates,
        } => {
            let cfg = cfg.load()?;
            let t = cli::eval(&cfg, &checkpoint, matches!(split, SplitArg::Val), gates.into())?;
            println!("accuracy {:.6} loss {:.6} samples {}", t.accuracy(), t.mean_loss(), t.count);
            let gates = t.mean_gates();
            if !gates.is_empty() {
                let g: Vec<String> = gates.iter().map(|v| format!("{:.4}", v)).collect();
                println!("mean gates (net first) {}", g.join(" "));
            }
        }
        Command::Ablate(a) => {
            let cfg = a.load()?;
            for r in cli::ablate(&cfg)? {
                println!(
                    "ad={} aw={} gates={} mask={:?} reg={} val {:.4} test {:.4}",
                    r.depth, r.width, r.gates, r.mask, r.reg, r.val_acc, r.test_acc
                );
            }
        }
        Command::Sweep { cfg, checkpoint } => {
            let cfg = cfg.load()?;
            for (d, acc) in cli::sweep(&cfg, &checkpoint)? {
                println!("D={} test_acc {:.4}", d, acc);
            }
        }
        Command::ExportMasks {
            checkpoint: ck,
            images,
            out,
            limit,
        } => {
            let (model, c) = checkpoint::load(&ck)?;
            let files = cli::export_masks(&model, &c.store, &images, &out, limit)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::GradCheck { seed } => {
            let r = cli::grad_check(seed)?;
            println!("max relative error {:.3e} (element {})", r.max_rel_error, r.worst_index);
            if r.max_rel_error >= cli::GRAD_CHECK_TOL {
                return Err(WarnError::Core(warn_core::Error::Contract {
                    op: "grad-check",
                    detail: format!("error {:.3e} exceeds {:e}", r.max_rel_error, cli::GRAD_CHECK_TOL),
                }));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
