use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metampc_core::ppo::{EpisodeOptions, TrainMode};
use metampc_harness::train::initial_policy;
use metampc_harness::{
    ablate, baseline_sweep, emit_plots, evaluate, load_checkpoint, train, ExperimentConfig, HarnessError, Provenance,
    TestSet,
};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "metampc", version, about = "Learned event-triggered MPC experiments on the cart-pole")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model seed; training runs every configured seed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Joint)]
    mode: ModeArg,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Environment steps per training run, overriding the configuration.
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fixed-schedule baseline grid over the test set.
    Sweep,
    /// PPO training of the meta-policy.
    Train,
    /// Evaluate a checkpoint, or the untrained policy, on the test set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One-at-a-time ablations of a trained policy.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Plot data from the results directory.
    Plots {
        /// Results to read; defaults to the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Joint,
    Recompute,
    Horizon,
    Lqr,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Joint => TrainMode::Joint,
            ModeArg::Recompute => TrainMode::Recompute,
            ModeArg::Horizon => TrainMode::Horizon,
            ModeArg::Lqr => TrainMode::Lqr,
        }
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = toml::to_string(value).map_err(|e| HarnessError::Numeric(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    if let Some(steps) = cli.steps {
        config.training.steps = steps;
    }
    if let Some(workers) = cli.workers {
        config.training.workers = workers;
    }
    config.validate()?;

    let out = config.output.clone();
    fs::create_dir_all(&out)?;
    let ctx = config.context();
    let test_set = TestSet::build(&config.test_set, &config.episodes);
    let provenance = Provenance::new(&config, &test_set);
    let workers = config.training.workers;
    fs::write(out.join("config.toml"), config.to_toml())?;
    test_set.write_csv(BufWriter::new(File::create(out.join("testset.csv"))?))?;

    match cli.command {
        Command::Sweep => {
            let grid = baseline_sweep(&ctx, &test_set, &config.sweep.periods, &config.sweep.horizons, workers)?;
            grid.write_csv(BufWriter::new(File::create(out.join("sweep.csv"))?), &provenance)?;
            match grid.argmin() {
                Some(best) => {
                    #[derive(Serialize)]
                    struct Argmin<'a> {
                        provenance: &'a Provenance,
                        best: &'a metampc_harness::SweepCell,
                    }
                    write_toml(&out.join("sweep_argmin.toml"), &Argmin { provenance: &provenance, best })?;
                    println!("argmin: every {} steps, N = {}, cost {:.2}", best.period, best.horizon, best.total_cost);
                }
                None => return Err(HarnessError::Solver("every sweep cell failed".into())),
            }
        }
        Command::Train => {
            let mode = TrainMode::from(cli.mode);
            let seeds = cli.seed.map(|s| vec![s]).unwrap_or_else(|| config.seeds.clone());
            for seed in seeds {
                let dir = out.join(mode.name()).join(format!("seed{seed}"));
                let outcome = train(&config, &ctx, &test_set, mode, seed, config.training.steps, workers, &dir, |m| {
                    eprintln!(
                        "seed {seed} it {} steps {} cost {:.1} recompute {:.3} horizon {:.1} kl {:.4}",
                        m.iteration, m.env_steps, m.mean_episode_cost, m.recompute_fraction, m.mean_horizon, m.approx_kl
                    )
                })?;
                println!("seed {seed}: {} iterations, checkpoints in {}", outcome.metrics.len(), outcome.dir.display());
            }
        }
        Command::Eval { checkpoint } => {
            let policy = match &checkpoint {
                Some(path) => load_checkpoint(&config, &ctx, path)?,
                None => initial_policy(&config, &ctx, cli.seed.unwrap_or(config.seeds[0])),
            };
            let evaluation = evaluate(&ctx, &policy, &test_set, &config.eval_seeds, EpisodeOptions::evaluate(), workers)?;
            let report = evaluation.report(&provenance);
            write_toml(&out.join("eval.toml"), &report)?;
            evaluation.write_histograms(
                config.policy.n_max,
                BufWriter::new(File::create(out.join("horizon_hist.csv"))?),
                BufWriter::new(File::create(out.join("gap_hist.csv"))?),
                &provenance,
            )?;
            println!(
                "mean cost {:.2} (seed std {:.2}), recompute fraction {:.3}, mean horizon {:.1}",
                report.mean_total_cost, report.seed_cost_std, report.recompute_fraction, report.mean_horizon
            );
        }
        Command::Ablate { checkpoint } => {
            let policy = load_checkpoint(&config, &ctx, &checkpoint)?;
            let report = ablate(&ctx, &policy, &test_set, &config.eval_seeds, workers, &provenance)?;
            write_toml(&out.join("ablation.toml"), &report)?;
            println!("base cost {:.2}", report.base_cost);
            for row in &report.rows {
                println!("{:<22} {:>9.2} {:>+8.2}%", row.scenario, row.total_cost, row.change_percent);
            }
        }
        Command::Plots { results } => {
            let dir = results.unwrap_or_else(|| out.clone());
            for path in emit_plots(&dir, &out.join("plots"))? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
