use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use metampc_core::closedloop::ControlContext;
use metampc_core::plant::EpisodeConfig;
use metampc_core::policy::MetaPolicy;
use metampc_core::ppo::checkpoint::{Archive, Tensor};
use metampc_core::ppo::{load_policy, EpisodeOptions, IterationMetrics, TrainMode, Trainer, METRICS_HEADER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{evaluate, ExperimentConfig, HarnessError, Provenance, TestSet};

#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<IterationMetrics>,
    /// Iteration and test-set cost of the best periodic evaluation.
    pub best: Option<(u64, f64)>,
    pub dir: PathBuf,
}

fn save(trainer: &Trainer, path: &Path, provenance: &Provenance) -> Result<(), HarnessError> {
    let mut archive = trainer.to_archive();
    annotate(&mut archive, provenance);
    let mut w = BufWriter::new(File::create(path)?);
    archive.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn annotate(archive: &mut Archive, provenance: &Provenance) {
    archive.insert("meta.config_hash", Tensor::bytes(provenance.config_hash.as_bytes().to_vec()));
    archive.insert("meta.test_set_hash", Tensor::bytes(provenance.test_set_hash.as_bytes().to_vec()));
    archive.insert("meta.code_version", Tensor::bytes(provenance.code_version.as_bytes().to_vec()));
}

/// Initial policy for a model seed.
pub fn initial_policy(config: &ExperimentConfig, ctx: &ControlContext, seed: u64) -> MetaPolicy {
    MetaPolicy::new(config.policy, ctx.default_weights(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Policy stored in a checkpoint written by `train`.
pub fn load_checkpoint(config: &ExperimentConfig, ctx: &ControlContext, path: &Path) -> Result<MetaPolicy, HarnessError> {
    let archive = Archive::read(std::io::BufReader::new(File::open(path)?))?;
    let mut policy = initial_policy(config, ctx, 0);
    load_policy(&mut policy, &archive)?;
    Ok(policy)
}

/// Train one model seed in `mode` until `steps` environment steps, writing
/// `metrics.csv`, periodic `checkpoint.ckpt`, `final.ckpt` and, when periodic
/// evaluation is enabled, `evals.csv` and `best.ckpt` into `dir`. A failing
/// iteration leaves `failed.ckpt` behind.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &ExperimentConfig,
    ctx: &ControlContext,
    test_set: &TestSet,
    mode: TrainMode,
    seed: u64,
    steps: u64,
    workers: usize,
    dir: &Path,
    mut progress: impl FnMut(&IterationMetrics),
) -> Result<TrainOutcome, HarnessError> {
    fs::create_dir_all(dir)?;
    let provenance = Provenance::new(config, test_set);
    let episodes = EpisodeConfig { seed, ..config.episodes };
    let mut trainer =
        Trainer::new(initial_policy(config, ctx, seed), config.ppo, mode, episodes, config.frame_skips(mode), seed);

    let mut metrics_file = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    provenance.write_comment(&mut metrics_file)?;
    writeln!(metrics_file, "{METRICS_HEADER}")?;
    let mut evals_file = None;
    if config.training.eval_every > 0 {
        let mut w = BufWriter::new(File::create(dir.join("evals.csv"))?);
        provenance.write_comment(&mut w)?;
        writeln!(w, "iteration,env_steps,mean_total_cost,recompute_fraction,mean_horizon")?;
        evals_file = Some(w);
    }

    let mut metrics = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    while trainer.env_steps < steps {
        let m = match trainer.iterate(ctx, workers) {
            Ok(m) => m,
            Err(e) => {
                save(&trainer, &dir.join("failed.ckpt"), &provenance)?;
                return Err(e.into());
            }
        };
        m.write_row(&mut metrics_file)?;
        metrics_file.flush()?;
        progress(&m);
        if m.iteration % config.training.checkpoint_every == 0 {
            save(&trainer, &dir.join("checkpoint.ckpt"), &provenance)?;
        }
        if let Some(w) = evals_file.as_mut() {
            if m.iteration % config.training.eval_every == 0 || trainer.env_steps >= steps {
                let seeds = &config.eval_seeds[..1];
                let stats = evaluate(ctx, trainer.policy(), test_set, seeds, EpisodeOptions::evaluate(), workers)?.stats();
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    m.iteration, m.env_steps, stats.mean_total_cost, stats.recompute_fraction, stats.mean_horizon
                )?;
                w.flush()?;
                if best.is_none_or(|(_, c)| stats.mean_total_cost < c) {
                    best = Some((m.iteration, stats.mean_total_cost));
                    save(&trainer, &dir.join("best.ckpt"), &provenance)?;
                }
            }
        }
        metrics.push(m);
    }
    save(&trainer, &dir.join("final.ckpt"), &provenance)?;
    Ok(TrainOutcome { trainer, metrics, best, dir: dir.to_path_buf() })
}
