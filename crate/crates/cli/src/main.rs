use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpde::cost::model_cost;
use qpde::datagen::{generate_dataset, write_dataset, Pde, SolverConfig};
use qpde::experiment::{
    emit_outputs, evaluate_checkpoint, init_model, pareto_front, read_records, records_to_csv, run_experiment, split_dataset,
    RunConfig,
};
use qpde::quant::{attach_quantizers, QuantRegime};
use qpde::train::{calibration_batch, evaluate, qat_finetune, train, Checkpoint};
use qpde::Result;

#[derive(Parser)]
#[command(name = "qpde", version, about = "Train, quantize and cost-profile neural PDE surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a PDE for a batch of random initial conditions.
    GenerateData {
        #[arg(long)]
        pde: Pde,
        /// Points per spatial axis of the stored data.
        #[arg(long)]
        nx: usize,
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// Stored snapshots (defaults per PDE).
        #[arg(long)]
        nt: Option<usize>,
        /// Solver settings (TOML); overrides --pde/--nx/--nt.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a float model at one scale.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach calibrated quantizers to a float checkpoint without fine-tuning.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        regime: QuantRegime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate and fine-tune a float checkpoint under a quantization regime.
    Qat {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        regime: QuantRegime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation MSE of a checkpoint.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-layer cost report of a checkpoint.
    Cost {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Price as this regime instead of the checkpoint's own.
        #[arg(long)]
        regime: Option<QuantRegime>,
        /// Rollout length in snapshots.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Full grid: float training per scale, QAT per regime and scale.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<QuantRegime>>,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Pareto-optimal rows of a results file.
    Pareto {
        #[arg(long)]
        results: PathBuf,
    },
    /// Write results.csv and Pareto plots for a results file.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("QPDE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: cannot size thread pool: {e}");
        }
    }
}

fn load_split(cfg: &RunConfig) -> Result<qpde::experiment::Split> {
    split_dataset(&qpde::datagen::read_dataset(&cfg.dataset)?, cfg.validation_fraction)
}

fn float_model(path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.model.is_quantized() {
        return Err(qpde::Error::Usage(format!("{} already holds a quantized model", path.display())));
    }
    Ok(ck)
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenerateData { pde, nx, count, nt, config, seed, out } => {
            let solver = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| qpde::Error::Io { path: p.clone(), source: e })?;
                    toml::from_str(&text).map_err(|e| qpde::Error::Config(format!("{}: {e}", p.display())))?
                }
                None => {
                    let mut c = SolverConfig::new(pde, nx);
                    if let Some(nt) = nt {
                        c.nt = nt;
                    }
                    c
                }
            };
            let ds = generate_dataset(&solver, count, seed, 0)?;
            write_dataset(&ds, &out)?;
            println!("wrote {} trajectories of shape {:?} to {}", ds.len(), ds.shape, out.display());
        }
        Command::Train { run, scale, out } => {
            let cfg = run.load()?;
            let split = load_split(&cfg)?;
            let model = init_model(&cfg, &split.train, scale)?;
            let o = train(model, &split.train, &split.val, &cfg.train)?;
            for r in &o.history {
                println!("epoch {:4}  train {:.6e}  val {:.6e}  lr {:.3e}", r.epoch, r.train_loss, r.val_loss, r.lr);
            }
            o.checkpoint(None, cfg.train.seed).save(&out)?;
            println!("best val MSE {:.6e} at epoch {}", o.best_val, o.best_epoch);
        }
        Command::Calibrate { run, checkpoint, regime, out } => {
            let cfg = run.load()?;
            let split = load_split(&cfg)?;
            let ck = float_model(&checkpoint)?;
            let model = attach_quantizers(&ck.model, regime, &calibration_batch(&split.train, &cfg.train)?)?;
            let mse = evaluate(&model, &split.val, &cfg.train)?;
            Checkpoint { model, regime: Some(regime), ..ck }.save(&out)?;
            println!("calibrated {regime}: val MSE {mse:.6e}");
        }
        Command::Qat { run, checkpoint, regime, out } => {
            let cfg = run.load()?;
            let split = load_split(&cfg)?;
            let ck = float_model(&checkpoint)?;
            let o = qat_finetune(&ck.model, regime, &split.train, &split.val, &cfg.train)?;
            o.checkpoint(Some(regime), cfg.train.seed).save(&out)?;
            println!("{regime}: best val MSE {:.6e} at epoch {}", o.best_val, o.best_epoch);
        }
        Command::Evaluate { run, checkpoint } => {
            let cfg = run.load()?;
            println!("{:.12e}", evaluate_checkpoint(&cfg, &checkpoint)?);
        }
        Command::Cost { checkpoint, regime, steps } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let steps = steps.unwrap_or(ck.model.spec.output_steps);
            let report = model_cost(&ck.model, regime.or(ck.regime), steps)?;
            print!("{}", report.to_table());
        }
        Command::Sweep { run, regimes, scales, out } => {
            let mut cfg = run.load()?;
            if let Some(r) = regimes {
                cfg.regimes = r;
            }
            if let Some(s) = scales {
                cfg.scales = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_experiment(&cfg)?;
            for f in &outcome.failures {
                eprintln!("cell {} failed: {}", f.cell, f.error);
            }
            println!("{} records, {} trained now, {} failed", outcome.records.len(), outcome.trained.len(), outcome.failures.len());
            if !outcome.records.is_empty() {
                for p in emit_outputs(&outcome.records, &cfg.output_dir)? {
                    println!("wrote {}", p.display());
                }
            }
            return Ok(outcome.complete());
        }
        Command::Pareto { results } => {
            print!("{}", records_to_csv(&pareto_front(&read_records(&results)?))?);
        }
        Command::Plot { results, out } => {
            for p in emit_outputs(&read_records(&results)?, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
