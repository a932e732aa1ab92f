use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tomrl::checkpoint;
use tomrl::harness::{run_cell, run_grid, ExperimentConfig, GridRow};
use tomrl::trainer::{derive_seed, evaluate_policy};
use tomrl::{Error, Result};

/// Belief-grounded MARL on the physical-deception particle world.
#[derive(Parser)]
#[command(name = "tomrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (flat key=value file). Defaults apply without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Grid row; `train` defaults to the configured row, `grid` to all rows.
    #[arg(long)]
    row: Option<String>,
    /// Seed; `train` defaults to the first configured seed, `grid` to all.
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment-step budget per run.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate a single cell.
    Train(Common),
    /// Evaluate `good_final.ckpt` and `adv_final.ckpt` from a checkpoint directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoints.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Run rows × seeds and write the results table.
    Grid(Common),
    /// Plot seed-averaged curves from every metrics.csv under a directory.
    Plot {
        /// Directory searched recursively for metrics.csv files.
        metrics: PathBuf,
        /// Output directory for images and curve tables.
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(steps) = common.steps {
        cfg.train.total_steps = steps;
    }
    if let Some(name) = &common.row {
        cfg.row = parse_row(name)?;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_row(name: &str) -> Result<GridRow> {
    GridRow::from_name(name).ok_or_else(|| Error::BadValue {
        key: "row".into(),
        expected: "a grid row name",
        value: name.into(),
    })
}

fn evaluate(cfg: &ExperimentConfig, dir: &Path, out: &Path) -> Result<()> {
    let (good, _) = checkpoint::load(&dir.join("good_final.ckpt"))?;
    let (adv, _) = checkpoint::load(&dir.join("adv_final.ckpt"))?;
    let seed = cfg.seeds[0];
    let report = evaluate_policy(&cfg.env, &good, &adv, cfg.eval_episodes, derive_seed(seed, 300))?;
    std::fs::create_dir_all(out)?;
    tomrl::trajectory::write_csv(
        std::fs::File::create(out.join("trajectory.csv"))?,
        cfg.env.n_agents(),
        &report.trajectory,
    )?;
    println!("good mean {} var {}", report.good_mean, report.good_var);
    println!("adv  mean {} var {}", report.adv_mean, report.adv_var);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let dir = common.out.join(cfg.row.name()).join(format!("seed{seed}"));
            let cell = run_cell(&cfg, cfg.row, seed, &dir)?;
            println!(
                "{} seed {}: good {} (var {}), adv {} (var {})",
                cell.row, cell.seed, cell.good_mean, cell.good_var, cell.adv_mean, cell.adv_var
            );
        }
        Command::Evaluate { common, checkpoints } => {
            let cfg = load_config(&common)?;
            evaluate(&cfg, &checkpoints, &common.out)?;
        }
        Command::Grid(common) => {
            let cfg = load_config(&common)?;
            let rows = match &common.row {
                Some(_) => vec![cfg.row],
                None => GridRow::ALL.to_vec(),
            };
            for s in run_grid(&cfg, &rows, &cfg.seeds, &common.out)? {
                println!(
                    "{:<18} good {:>9.4} ± {:.4}   adv {:>9.4} ± {:.4}   ({} seeds)",
                    s.row.name(),
                    s.good_mean,
                    s.good_stderr,
                    s.adv_mean,
                    s.adv_stderr,
                    s.n_seeds
                );
            }
        }
        Command::Plot { metrics, out } => {
            for path in tomrl::plot::plot_curves(&metrics, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
