use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{position_violated, step, PendulumParams, PlantState, StageCost};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Maximum number of control steps `T`.
    pub horizon: usize,
    /// The position reference is redrawn every this many steps.
    pub reference_period: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { horizon: 150, reference_period: 50, seed: 0 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 || self.reference_period == 0 {
            return Err("episode horizon and reference period must be positive".into());
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.horizon.div_ceil(self.reference_period)
    }
}

/// `x0 = [0, U(-1,1), U(-pi,pi), U(-1,1)]`.
pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R) -> PlantState {
    let pi = std::f64::consts::PI;
    PlantState::new(0.0, rng.random_range(-1.0..1.0), rng.random_range(-pi..pi), rng.random_range(-1.0..1.0))
}

pub fn sample_reference<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Everything random about one episode, drawn up front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub initial: PlantState,
    /// One reference per redraw segment.
    pub references: Vec<f64>,
    pub reference_period: usize,
    pub horizon: usize,
    /// Seeds any stochasticity of the controller acting in this episode.
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn sample<R: Rng + ?Sized>(config: &EpisodeConfig, rng: &mut R) -> Self {
        let initial = sample_initial(rng);
        let references = (0..config.segments()).map(|_| sample_reference(rng)).collect();
        Self {
            initial,
            references,
            reference_period: config.reference_period,
            horizon: config.horizon,
            seed: rng.random(),
        }
    }

    pub fn reference_at(&self, t: usize) -> f64 {
        let idx = (t / self.reference_period).min(self.references.len() - 1);
        self.references[idx]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// Stage cost of the transition, evaluated on the new state.
    pub cost: f64,
    pub violated: bool,
    /// Reached `T` without violation.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.violated || self.truncated
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct TraceRow {
    step: usize,
    state: PlantState,
    u: f64,
    psi_r: f64,
    cost: f64,
    computed: bool,
    horizon: usize,
}

/// One simulated episode on the true plant.
#[derive(Clone, Debug)]
pub struct Episode {
    pub params: PendulumParams,
    pub cost: StageCost,
    pub spec: EpisodeSpec,
    state: PlantState,
    t: usize,
    u_prev: f64,
    finished: bool,
    total_cost: f64,
    trace: Option<Vec<TraceRow>>,
}

impl Episode {
    pub fn new(spec: EpisodeSpec, params: PendulumParams, cost: StageCost) -> Self {
        Self {
            params,
            cost,
            state: spec.initial,
            spec,
            t: 0,
            u_prev: 0.0,
            finished: false,
            total_cost: 0.0,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::with_capacity(self.spec.horizon));
        self
    }

    pub fn state(&self) -> PlantState {
        self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn u_prev(&self) -> f64 {
        self.u_prev
    }

    pub fn reference(&self) -> f64 {
        self.spec.reference_at(self.t)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn remaining(&self) -> usize {
        self.spec.horizon - self.t
    }

    /// Apply an (already clamped) input for one period. `computed` and
    /// `horizon` are only recorded in the trace.
    pub fn advance(&mut self, u: f64, computed: bool, horizon: usize) -> StepOutcome {
        assert!(!self.finished, "episode already finished");
        let psi_r = self.reference();
        let next = step(&self.state, u, &self.params);
        let cost = self.cost.value(&next, u, self.u_prev, psi_r, &self.params);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow { step: self.t, state: self.state, u, psi_r, cost, computed, horizon });
        }
        self.state = next;
        self.u_prev = u;
        self.t += 1;
        self.total_cost += cost;
        let violated = position_violated(&next) || !next.is_finite();
        let truncated = !violated && self.t >= self.spec.horizon;
        self.finished = violated || truncated;
        StepOutcome { state: next, cost, violated, truncated }
    }

    /// Write the recorded trace as CSV. Rows hold the state before the input.
    pub fn write_trace<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,psi,v,phi,omega,u,psi_r,cost,computed_flag,horizon")?;
        for r in self.trace.iter().flatten() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.state.psi,
                r.state.v,
                r.state.phi,
                r.state.omega,
                r.u,
                r.psi_r,
                r.cost,
                u8::from(r.computed),
                r.horizon
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampling_is_reproducible() {
        let cfg = EpisodeConfig::default();
        let a = EpisodeSpec::sample(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = EpisodeSpec::sample(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.initial.psi, 0.0);
        assert_eq!(a.references.len(), 3);
    }

    #[test]
    fn reference_draws_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_reference(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!(draws.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn reference_switches_every_period() {
        let spec = EpisodeSpec {
            initial: PlantState::UPRIGHT,
            references: vec![0.1, 0.2, 0.3],
            reference_period: 50,
            horizon: 150,
            seed: 0,
        };
        assert_eq!(spec.reference_at(49), 0.1);
        assert_eq!(spec.reference_at(50), 0.2);
        assert_eq!(spec.reference_at(149), 0.3);
    }

    #[test]
    fn identical_inputs_give_identical_episodes() {
        let cfg = EpisodeConfig::default();
        let spec = EpisodeSpec::sample(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let run = || {
            let mut ep = Episode::new(spec.clone(), PendulumParams::plant(), StageCost::default());
            let mut out = Vec::new();
            while !ep.is_finished() {
                let u = (ep.t() as f64 * 0.37).sin();
                out.push(ep.advance(u, false, 0));
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.state.to_vector(), y.state.to_vector());
            assert_eq!(x.cost.to_bits(), y.cost.to_bits());
        }
    }

    #[test]
    fn violation_ends_episode() {
        let spec = EpisodeSpec {
            initial: PlantState::new(1.99, 1.0, 0.0, 0.0),
            references: vec![0.0],
            reference_period: 50,
            horizon: 150,
            seed: 0,
        };
        let mut ep = Episode::new(spec, PendulumParams::plant(), StageCost::default());
        let out = ep.advance(5.0, false, 0);
        assert!(out.violated && out.done());
        assert!(ep.is_finished());
    }

    #[test]
    fn trace_has_documented_header() {
        let cfg = EpisodeConfig::default();
        let spec = EpisodeSpec::sample(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let mut ep = Episode::new(spec, PendulumParams::plant(), StageCost::default()).with_trace();
        ep.advance(0.0, true, 31);
        ep.advance(0.0, false, 31);
        let mut buf = Vec::new();
        ep.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,psi,v,phi,omega,u,psi_r,cost,computed_flag,horizon"));
        assert_eq!(lines.count(), 2);
    }
}
