//! The mixture policy over (recompute, horizon, input): augmented state,
//! dual-mode control laws, sampling, log-probabilities and their gradients.

mod distributions;

pub use distributions::{
    log_sigmoid, recompute_bias, sigmoid, Bernoulli, Gaussian, GeneralizedPoisson, HorizonRange,
};

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{Mlp, MlpError, RunningNormalizer};
use crate::ocp::{OcpError, OcpSolution};
use crate::plant::PlantState;
use crate::riccati::{
    backward_pass, column_to_dmatrix, dare_sensitivity, solve_dare, timevarying_sensitivity, to_dmatrix,
    to_dvector, DareSolution, LqrSequence, LqrWeights, RiccatiError, Sensitivity, WeightDirection,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

pub const FEATURES: usize = 14;

/// Markovian state: snapshot at the last computation plus the current one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedState {
    pub x_i: PlantState,
    pub reference_i: f64,
    pub horizon_i: usize,
    pub x_t: PlantState,
    pub reference_t: f64,
    pub steps_since: usize,
}

fn push_state(out: &mut Vec<f64>, x: &PlantState) {
    let (s, c) = x.phi.sin_cos();
    out.extend_from_slice(&[x.psi, x.v, s, c, x.omega]);
}

impl AugmentedState {
    /// State right after a computation at `x` with horizon `horizon`.
    pub fn at_computation(x: PlantState, reference: f64, horizon: usize) -> Self {
        Self { x_i: x, reference_i: reference, horizon_i: horizon, x_t: x, reference_t: reference, steps_since: 0 }
    }

    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(FEATURES);
        push_state(&mut f, &self.x_i);
        f.push(self.reference_i);
        f.push(self.horizon_i as f64);
        push_state(&mut f, &self.x_t);
        f.push(self.reference_t);
        f.push(self.steps_since as f64);
        f
    }

    /// Bookkeeping over one plant step: on a recomputation with horizon `n`
    /// the snapshot moves to the current state first.
    pub fn transition(&self, recomputed: Option<usize>, next: PlantState, next_reference: f64) -> Self {
        let base = match recomputed {
            Some(n) => Self::at_computation(self.x_t, self.reference_t, n),
            None => *self,
        };
        Self { x_t: next, reference_t: next_reference, steps_since: base.steps_since + 1, ..base }
    }
}

/// One MPC computation with its linearizations, shared by every step that
/// uses it.
#[derive(Clone, Debug, PartialEq)]
pub struct Computation {
    pub solution: OcpSolution,
    pub a_seq: Vec<DMatrix<f64>>,
    pub b_seq: Vec<DMatrix<f64>>,
}

impl Computation {
    pub fn new(solution: OcpSolution) -> Self {
        let a_seq = solution.a_seq.iter().map(to_dmatrix).collect();
        let b_seq = solution.b_seq.iter().map(column_to_dmatrix).collect();
        Self { solution, a_seq, b_seq }
    }

    pub fn horizon(&self) -> usize {
        self.solution.horizon()
    }
}

/// How the mean of the executed input depends on the LQR weights.
#[derive(Clone, Debug, PartialEq)]
pub enum InputMean {
    /// Fresh MPC input, independent of the tunable parameters.
    Mpc(f64),
    /// `u_M[offset] - K_offset error`, `error = x_t - x_pred[offset]`.
    Tracking { u_mpc: f64, error: Vector4<f64>, computation: Arc<Computation>, offset: usize },
    /// `-K_inf error`, `error = x_t - x_s`.
    Steady { error: Vector4<f64> },
}

/// Means of the two control laws at a state.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLaws {
    pub u_mpc: f64,
    pub u_dual: f64,
    pub dual: InputMean,
}

/// Evaluate the pure-MPC and MPC+LQR laws against the stored computation.
pub fn control_laws(s: &AugmentedState, computation: &Arc<Computation>, gains: &LqrSequence, k_inf: &DMatrix<f64>) -> ControlLaws {
    let j = s.steps_since;
    if j < computation.horizon() {
        let u_mpc = computation.solution.u_seq[j];
        let error = s.x_t.to_vector() - computation.solution.x_pred[j];
        let u_dual = u_mpc - (&gains.k_seq[j] * to_dvector(&error))[0];
        ControlLaws { u_mpc, u_dual, dual: InputMean::Tracking { u_mpc, error, computation: computation.clone(), offset: j } }
    } else {
        let error = s.x_t.to_vector() - PlantState::steady(s.reference_t).to_vector();
        let u_dual = -(k_inf * to_dvector(&error))[0];
        ControlLaws { u_mpc: 0.0, u_dual, dual: InputMean::Steady { error } }
    }
}

/// LQR quantities for one value of the weights; caches per-computation
/// sweeps and their sensitivities.
#[derive(Clone, Debug)]
pub struct LqrEvaluator {
    pub weights: LqrWeights,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    a_s: DMatrix<f64>,
    b_s: DMatrix<f64>,
    pub steady: DareSolution,
    directions: Vec<WeightDirection>,
    steady_sensitivity: Option<Sensitivity>,
    sweeps: HashMap<usize, (Arc<Computation>, LqrSequence)>,
    sweep_gradients: HashMap<usize, Vec<Vec<DMatrix<f64>>>>,
}

impl LqrEvaluator {
    pub fn new(weights: &LqrWeights, a_s: &DMatrix<f64>, b_s: &DMatrix<f64>) -> Result<Self, RiccatiError> {
        let q = weights.q();
        let r = weights.r();
        let steady = solve_dare(a_s, b_s, &q, &r)?;
        Ok(Self {
            weights: weights.clone(),
            q,
            r,
            a_s: a_s.clone(),
            b_s: b_s.clone(),
            steady,
            directions: weights.directions(),
            steady_sensitivity: None,
            sweeps: HashMap::new(),
            sweep_gradients: HashMap::new(),
        })
    }

    pub fn k_inf(&self) -> &DMatrix<f64> {
        &self.steady.k
    }

    fn key(c: &Arc<Computation>) -> usize {
        Arc::as_ptr(c) as usize
    }

    /// Drop cached sweeps, releasing the computations they keep alive.
    pub fn clear_cache(&mut self) {
        self.sweeps.clear();
        self.sweep_gradients.clear();
    }

    /// Time-varying gains along a computation, terminal `S_inf`.
    pub fn sweep(&mut self, c: &Arc<Computation>) -> Result<&LqrSequence, RiccatiError> {
        let key = Self::key(c);
        if !self.sweeps.contains_key(&key) {
            let sweep = backward_pass(&c.a_seq, &c.b_seq, &self.q, &self.r, &self.steady.s)?;
            self.sweeps.insert(key, (c.clone(), sweep));
        }
        Ok(&self.sweeps[&key].1)
    }

    pub fn steady_sensitivity(&mut self) -> Result<&Sensitivity, RiccatiError> {
        if self.steady_sensitivity.is_none() {
            let s = dare_sensitivity(&self.a_s, &self.b_s, &self.r, &self.steady, &self.directions)?;
            self.steady_sensitivity = Some(s);
        }
        Ok(self.steady_sensitivity.as_ref().unwrap())
    }

    /// `dK_offset / dp` for every weight parameter.
    pub fn gain_gradients(&mut self, c: &Arc<Computation>, offset: usize) -> Result<&[DMatrix<f64>], RiccatiError> {
        let key = Self::key(c);
        if !self.sweep_gradients.contains_key(&key) {
            self.sweep(c)?;
            let terminal = self.steady_sensitivity()?.ds.clone();
            let sweep = &self.sweeps[&key].1;
            let dk = timevarying_sensitivity(&c.a_seq, &c.b_seq, &self.r, sweep, &terminal, &self.directions)?;
            self.sweep_gradients.insert(key, dk);
        }
        Ok(&self.sweep_gradients[&key][offset])
    }

    /// Mean of the MPC+LQR input under these weights.
    pub fn dual_mean(&mut self, mean: &InputMean) -> Result<f64, RiccatiError> {
        Ok(match mean {
            InputMean::Mpc(u) => *u,
            InputMean::Tracking { u_mpc, error, computation, offset } => {
                let k = &self.sweep(computation)?.k_seq[*offset];
                u_mpc - (k * to_dvector(error))[0]
            }
            InputMean::Steady { error } => -(&self.steady.k * to_dvector(error))[0],
        })
    }

    /// `d mean / dp` for every weight parameter.
    pub fn dual_mean_gradient(&mut self, mean: &InputMean) -> Result<Vec<f64>, RiccatiError> {
        let n = self.directions.len();
        Ok(match mean {
            InputMean::Mpc(_) => vec![0.0; n],
            InputMean::Tracking { error, computation, offset, .. } => {
                let e = to_dvector(error);
                self.gain_gradients(computation, *offset)?.iter().map(|dk| -(dk * &e)[0]).collect()
            }
            InputMean::Steady { error } => {
                let e = to_dvector(error);
                self.steady_sensitivity()?.dk.iter().map(|dk| -(dk * &e)[0]).collect()
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Recompute,
    Horizon,
    Dispersion,
    Lqr,
    SigmaMpc,
    SigmaDual,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Recompute,
        ParamGroup::Horizon,
        ParamGroup::Dispersion,
        ParamGroup::Lqr,
        ParamGroup::SigmaMpc,
        ParamGroup::SigmaDual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Recompute => "recompute",
            ParamGroup::Horizon => "horizon",
            ParamGroup::Dispersion => "alpha",
            ParamGroup::Lqr => "lqr",
            ParamGroup::SigmaMpc => "log_sigma_mpc",
            ParamGroup::SigmaDual => "log_sigma_dual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub c_init: f64,
    pub n_init: f64,
    pub alpha_init: f64,
    pub sigma_mpc_init: f64,
    pub sigma_dual_init: f64,
    pub hidden: usize,
    /// Gain of the orthogonal init of each head's output layer.
    pub output_gain: f64,
    pub normalizer_warmup: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 40,
            c_init: 0.9,
            n_init: 31.0,
            alpha_init: 0.0,
            sigma_mpc_init: 0.3,
            sigma_dual_init: 0.3,
            hidden: 64,
            output_gain: 0.01,
            normalizer_warmup: 10_000,
        }
    }
}

impl PolicyConfig {
    pub fn range(&self) -> HorizonRange {
        HorizonRange { min: self.n_min, max: self.n_max }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_min < 1 || self.n_min >= self.n_max {
            return Err(format!("need 1 <= n_min < n_max, got {} and {}", self.n_min, self.n_max));
        }
        if !(self.c_init > 0.0 && self.c_init < 1.0) {
            return Err(format!("c_init must lie in (0, 1), got {}", self.c_init));
        }
        if !(self.n_init > self.n_min as f64 && self.n_init < self.n_max as f64) {
            return Err(format!("n_init must lie strictly inside the horizon range, got {}", self.n_init));
        }
        if !(self.sigma_mpc_init > 0.0 && self.sigma_dual_init > 0.0) {
            return Err("initial standard deviations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    /// Mode of the horizon and input distributions; the recompute head stays stochastic.
    Exploit,
}

/// A full action, `input` being the sampled value before clamping.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    /// Normalized head input at decision time.
    pub features: Vec<f64>,
    pub recompute: bool,
    /// Sampled horizon when recomputing, the stored one otherwise.
    pub horizon: usize,
    pub input: f64,
    pub mean: InputMean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProbTerms {
    pub recompute: f64,
    pub horizon: f64,
    pub input: f64,
}

impl LogProbTerms {
    pub fn total(&self) -> f64 {
        self.recompute + self.horizon + self.input
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaPolicy {
    pub config: PolicyConfig,
    pub recompute_net: Mlp,
    pub horizon_net: Mlp,
    pub alpha: f64,
    pub lqr: LqrWeights,
    pub log_sigma_mpc: f64,
    pub log_sigma_dual: f64,
    pub normalizer: RunningNormalizer,
}

impl MetaPolicy {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, lqr: LqrWeights, rng: &mut R) -> Self {
        let sizes = [FEATURES, config.hidden, config.hidden, 1];
        let mut policy = Self {
            recompute_net: Mlp::init(&sizes, config.output_gain, rng),
            horizon_net: Mlp::init(&sizes, config.output_gain, rng),
            alpha: config.alpha_init,
            lqr,
            log_sigma_mpc: config.sigma_mpc_init.ln(),
            log_sigma_dual: config.sigma_dual_init.ln(),
            normalizer: RunningNormalizer::new(FEATURES, config.normalizer_warmup),
            config,
        };
        policy.initialize(config.c_init, config.n_init);
        policy
    }

    /// Set the head output biases so that the initial recompute probability
    /// is `c_init` and the initial rate is `n_init`.
    pub fn initialize(&mut self, c_init: f64, n_init: f64) {
        self.recompute_net.set_output_bias(&[recompute_bias(c_init)]);
        self.horizon_net.set_output_bias(&[self.range().bias_for(n_init)]);
    }

    pub fn range(&self) -> HorizonRange {
        self.config.range()
    }

    pub fn layout(&self) -> Vec<(ParamGroup, Range<usize>)> {
        let sizes = [
            self.recompute_net.num_params(),
            self.horizon_net.num_params(),
            1,
            self.lqr.num_params(),
            1,
            1,
        ];
        let mut start = 0;
        ParamGroup::ALL
            .iter()
            .zip(sizes)
            .map(|(g, n)| {
                let r = start..start + n;
                start += n;
                (*g, r)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().unwrap().1.end
    }

    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        self.layout().into_iter().find(|(g, _)| *g == group).unwrap().1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.recompute_net.params();
        p.extend(self.horizon_net.params());
        p.push(self.alpha);
        p.extend(self.lqr.params());
        p.push(self.log_sigma_mpc);
        p.push(self.log_sigma_dual);
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), PolicyError> {
        let layout = self.layout();
        if values.len() != self.num_params() {
            return Err(MlpError::ParameterCount { expected: self.num_params(), got: values.len() }.into());
        }
        for (group, range) in layout {
            let v = &values[range];
            match group {
                ParamGroup::Recompute => self.recompute_net.set_params(v)?,
                ParamGroup::Horizon => self.horizon_net.set_params(v)?,
                ParamGroup::Dispersion => self.alpha = v[0],
                ParamGroup::Lqr => self.lqr.set_params(v),
                ParamGroup::SigmaMpc => self.log_sigma_mpc = v[0],
                ParamGroup::SigmaDual => self.log_sigma_dual = v[0],
            }
        }
        Ok(())
    }

    /// Enforce `alpha >= -1/(2 N_max)`, which implies `alpha >= -1/N_max`.
    pub fn clip_alpha(&mut self) {
        self.alpha = self.alpha.max(self.range().alpha_floor());
    }

    /// Raw features through the running standardizer, updating it when `learn`.
    pub fn normalize(&mut self, raw: &[f64], learn: bool) -> Vec<f64> {
        if learn {
            self.normalizer.update(raw);
        }
        self.normalizer.normalize(raw)
    }

    pub fn recompute_head(&self, features: &[f64]) -> Result<Bernoulli, PolicyError> {
        Ok(Bernoulli { logit: self.recompute_net.forward(features)?[0] })
    }

    pub fn horizon_head(&self, features: &[f64]) -> Result<GeneralizedPoisson, PolicyError> {
        let raw = self.horizon_net.forward(features)?[0];
        Ok(GeneralizedPoisson { mu: self.range().rate(raw), alpha: self.alpha })
    }

    pub fn input_distribution(&self, recompute: bool, mean: f64) -> Gaussian {
        let log_std = if recompute { self.log_sigma_mpc } else { self.log_sigma_dual };
        Gaussian { mean, log_std }
    }

    /// Draw the recompute flag and, when recomputing, the horizon.
    pub fn decide<R: Rng + ?Sized>(&self, features: &[f64], mode: Mode, rng: &mut R) -> Result<(bool, Option<usize>), PolicyError> {
        let recompute = self.recompute_head(features)?.sample(rng);
        if !recompute {
            return Ok((false, None));
        }
        let gp = self.horizon_head(features)?;
        let n = match mode {
            Mode::Explore => gp.sample(&self.range(), rng),
            Mode::Exploit => gp.mode(&self.range()),
        };
        Ok((true, Some(n)))
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, recompute: bool, mean: f64, mode: Mode, rng: &mut R) -> f64 {
        match mode {
            Mode::Explore => self.input_distribution(recompute, mean).sample(rng),
            Mode::Exploit => mean,
        }
    }

    pub fn log_prob_terms(&self, sample: &PolicySample, lqr: &mut LqrEvaluator) -> Result<LogProbTerms, PolicyError> {
        let recompute = self.recompute_head(&sample.features)?.log_prob(sample.recompute);
        let horizon = self.horizon_head(&sample.features)?.log_pmf(sample.horizon);
        let mean = lqr.dual_mean(&sample.mean)?;
        let input = self.input_distribution(sample.recompute, mean).log_prob(sample.input);
        Ok(LogProbTerms { recompute, horizon, input })
    }

    pub fn log_prob(&self, sample: &PolicySample, lqr: &mut LqrEvaluator) -> Result<f64, PolicyError> {
        Ok(self.log_prob_terms(sample, lqr)?.total())
    }

    /// Adds `scale * grad log P(sample)` into `grad` (layout of `params()`)
    /// and returns the log-probability terms.
    pub fn log_prob_grad(
        &self,
        sample: &PolicySample,
        lqr: &mut LqrEvaluator,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LogProbTerms, PolicyError> {
        let layout = self.layout();
        let range = |g: ParamGroup| layout.iter().find(|(x, _)| *x == g).unwrap().1.clone();

        let c_cache = self.recompute_net.forward_cached(&sample.features)?;
        let bern = Bernoulli { logit: c_cache.output()[0] };
        self.recompute_net
            .backward_into(&c_cache, &[bern.dlogit(sample.recompute)], scale, &mut grad[range(ParamGroup::Recompute)]);

        let n_cache = self.horizon_net.forward_cached(&sample.features)?;
        let raw = n_cache.output()[0];
        let gp = GeneralizedPoisson { mu: self.range().rate(raw), alpha: self.alpha };
        let horizon = gp.log_pmf(sample.horizon);
        if horizon.is_finite() {
            let draw = gp.dmu(sample.horizon) * self.range().drate(raw);
            self.horizon_net.backward_into(&n_cache, &[draw], scale, &mut grad[range(ParamGroup::Horizon)]);
            grad[range(ParamGroup::Dispersion).start] += scale * gp.dalpha(sample.horizon);
        }

        let mean = lqr.dual_mean(&sample.mean)?;
        let dist = self.input_distribution(sample.recompute, mean);
        let input = dist.log_prob(sample.input);
        let sigma_group = if sample.recompute { ParamGroup::SigmaMpc } else { ParamGroup::SigmaDual };
        grad[range(sigma_group).start] += scale * dist.dlog_std(sample.input);
        if !matches!(sample.mean, InputMean::Mpc(_)) {
            let dmean = dist.dmean(sample.input);
            let lqr_range = range(ParamGroup::Lqr);
            for (g, dm) in grad[lqr_range].iter_mut().zip(lqr.dual_mean_gradient(&sample.mean)?) {
                *g += scale * dmean * dm;
            }
        }
        Ok(LogProbTerms { recompute: bern.log_prob(sample.recompute), horizon, input })
    }

    /// Names of every parameter in `params()` order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_params());
        for (group, range) in self.layout() {
            match group {
                ParamGroup::Lqr => names.extend(self.lqr.param_names().into_iter().map(|n| format!("lqr.{n}"))),
                g if range.len() == 1 => names.push(g.name().to_string()),
                g => names.extend((0..range.len()).map(|i| format!("{}[{i}]", g.name()))),
            }
        }
        names
    }
}
