use std::fs;
use std::process::Command;

use metampc_core::policy::PolicyConfig;
use metampc_core::ppo::{EpisodeOptions, TrainMode};
use metampc_harness::train::initial_policy;
use metampc_harness::{
    ablate, baseline_sweep, emit_plots, evaluate, load_checkpoint, train, ExperimentConfig, HarnessError, Provenance,
    TestSet,
};

fn setup() -> (ExperimentConfig, TestSet) {
    let config = ExperimentConfig::default();
    let test_set = TestSet::build(&config.test_set, &config.episodes);
    (config, test_set)
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let mut config = ExperimentConfig::default();
    config.ppo.learning_rate = 1.0 / 3.0;
    config.plant.l = 0.1 + 0.2;
    config.sweep.horizons = vec![5, 40];
    let text = config.to_toml();
    let back = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(back, config);
    assert_eq!(back.hash(), config.hash());

    let bad = format!("{text}\n[extra]\nkey = 1\n");
    assert!(matches!(ExperimentConfig::parse(&bad), Err(HarnessError::Config(_))));
    let typo = "[ppo]\nlearning_rat = 0.1\n";
    assert!(matches!(ExperimentConfig::parse(typo), Err(HarnessError::Config(_))));
    let invalid = "[sweep]\nhorizons = [0]\n";
    assert!(matches!(ExperimentConfig::parse(invalid), Err(HarnessError::Config(_))));
}

#[test]
fn defaults_match_the_reference_setup() {
    let config = ExperimentConfig::default();
    assert_eq!(config.seeds.len(), 5);
    assert_eq!(config.eval_seeds.len(), 5);
    assert_eq!(config.test_set.size, 25);
    assert_eq!(config.policy.c_init, 0.9);
    assert_eq!(config.policy.n_init, 31.0);
    assert_eq!(config.sweep.periods.len() * config.sweep.horizons.len(), 90);
}

#[test]
fn test_set_is_content_addressed() {
    let (config, a) = setup();
    let b = TestSet::build(&config.test_set, &config.episodes);
    assert_eq!(a.len(), 25);
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let mut other = config.test_set;
    other.seed += 1;
    assert_ne!(TestSet::build(&other, &config.episodes).hash(), a.hash());
    assert_ne!(a.subset(5).hash(), a.hash());
}

#[test]
fn mini_sweep_is_deterministic() {
    let (config, test_set) = setup();
    let ctx = config.context();
    let subset = test_set.subset(5);
    let a = baseline_sweep(&ctx, &subset, &[1, 5], &[10, 31], 1).unwrap();
    let b = baseline_sweep(&ctx, &subset, &[1, 5], &[10, 31], 2).unwrap();
    let strip = |g: &metampc_harness::SweepGrid| {
        g.cells.iter().map(|c| metampc_harness::SweepCell { solve_time: 0.0, ..c.clone() }).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.cells.len(), 4);
    assert!(a.cells.iter().all(|c| c.is_valid()));
    let one = a.cell(1, 31).unwrap();
    assert_eq!(one.computation_cost, 0.01 * 31.0 * 150.0);
    let best = a.argmin().unwrap();
    assert!(a.cells.iter().all(|c| c.total_cost >= best.total_cost));
}

#[test]
fn dry_run_training_evaluation_and_plots() {
    let (mut config, test_set) = setup();
    config.ppo.steps_per_actor = 16;
    config.ppo.actors = 2;
    config.ppo.value_hidden = 16;
    config.policy = PolicyConfig { hidden: 16, ..config.policy };
    config.training.checkpoint_every = 1;
    config.training.eval_every = 1;
    config.eval_seeds = vec![0];
    let small = test_set.subset(2);
    let ctx = config.context();
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("joint").join("seed0");
    let mut seen = 0;
    let outcome = train(&config, &ctx, &small, TrainMode::Joint, 0, 1000, 1, &run_dir, |_| seen += 1).unwrap();
    assert!(outcome.trainer.env_steps >= 1000);
    assert_eq!(seen, outcome.metrics.len());
    for name in ["metrics.csv", "evals.csv", "checkpoint.ckpt", "final.ckpt", "best.ckpt"] {
        assert!(run_dir.join(name).is_file(), "{name}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains(&format!("# test_set_hash {}", small.hash())));
    assert!(metrics.contains(&format!("# config_hash {}", config.hash())));

    let policy = load_checkpoint(&config, &ctx, &run_dir.join("final.ckpt")).unwrap();
    assert_eq!(policy.params(), outcome.trainer.policy().params());
    let evaluation = evaluate(&ctx, &policy, &small, &[0, 1], EpisodeOptions::evaluate(), 1).unwrap();
    let stats = evaluation.stats();
    assert!((0.0..=1.0).contains(&stats.recompute_fraction));
    assert_eq!(evaluation.seed_costs().len(), 2);
    let provenance = Provenance::new(&config, &small);
    evaluation
        .write_histograms(
            config.policy.n_max,
            fs::File::create(dir.path().join("horizon_hist.csv")).unwrap(),
            fs::File::create(dir.path().join("gap_hist.csv")).unwrap(),
            &provenance,
        )
        .unwrap();
    let grid = baseline_sweep(&ctx, &small, &[1, 4, 8], &[10, 20], 1).unwrap();
    grid.write_csv(fs::File::create(dir.path().join("sweep.csv")).unwrap(), &provenance).unwrap();

    let written = emit_plots(dir.path(), &dir.path().join("plots")).unwrap();
    assert_eq!(written.len(), 4);
    for path in &written {
        let text = fs::read_to_string(path).unwrap();
        let header = text.lines().filter(|l| l.starts_with('#')).last().unwrap();
        let columns = header.trim_start_matches('#').split_whitespace().count();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let values: Vec<f64> = line.split_whitespace().map(|v| v.parse().unwrap()).collect();
            assert_eq!(values.len(), columns, "{}", path.display());
        }
    }
    let surface = fs::read_to_string(dir.path().join("plots/surface.dat")).unwrap();
    let rows = surface.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count();
    assert_eq!(rows, 6);
    let curves = fs::read_to_string(dir.path().join("plots/curves.dat")).unwrap();
    let steps: Vec<f64> = curves
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert!(!steps.is_empty());
    assert!(steps.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn fixed_schedule_ablation_matches_an_always_recomputing_policy() {
    let (mut config, test_set) = setup();
    config.policy.c_init = 1.0 - 1e-12;
    let ctx = config.context();
    let policy = initial_policy(&config, &ctx, 3);
    let small = test_set.subset(3);
    let provenance = Provenance::new(&config, &small);
    let report = ablate(&ctx, &policy, &small, &[0], 1, &provenance).unwrap();
    assert_eq!(report.base_recompute_fraction, 1.0);
    assert_eq!(report.schedule_period, 1);
    let scheduled = report.rows.iter().find(|r| r.scenario == "fixed_schedule").unwrap();
    assert_eq!(scheduled.change_percent, 0.0);
    assert_eq!(report.provenance.test_set_hash, small.hash());
    let reset = report.rows.iter().find(|r| r.scenario == "default_lqr_weights").unwrap();
    assert_eq!(reset.change_percent, 0.0);
}

#[test]
fn cli_reports_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[ppo]\nclip = 0.2\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_metampc"))
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_metampc"))
        .args(["eval", "--config", "/nonexistent/config.toml"])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));
}

#[test]
fn cli_sweep_writes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, "[test_set]\nsize = 2\n\n[sweep]\nperiods = [1, 3]\nhorizons = [12]\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_metampc"))
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(sweep.contains("# code_version metampc "));
    let argmin = fs::read_to_string(out.join("sweep_argmin.toml")).unwrap();
    assert!(argmin.contains("test_set_hash"));
    let reloaded = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(reloaded.sweep.periods, vec![1, 3]);
}
