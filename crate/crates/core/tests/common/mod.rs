#![allow(dead_code)]

use metampc_core::closedloop::ControlContext;
use metampc_core::ocp::{PendulumOcp, SolverSettings};
use metampc_core::plant::{EpisodeConfig, EpisodeSpec, PendulumParams, StageCost};
use metampc_core::ppo::RewardConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn context() -> ControlContext {
    let ocp = PendulumOcp::pendulum(PendulumParams::mpc_model(), StageCost::default(), 1.0, SolverSettings::default());
    ControlContext::new(ocp, PendulumParams::plant(), StageCost::default(), RewardConfig::default())
}

pub fn episodes(n: usize, seed: u64) -> Vec<EpisodeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| EpisodeSpec::sample(&EpisodeConfig::default(), &mut rng)).collect()
}
