mod common;

use std::sync::Arc;

use metampc_core::closedloop::{ClosedLoop, ControlContext};
use metampc_core::ocp::OcpProblem;
use metampc_core::plant::{clamp_input, PlantState};
use metampc_core::policy::{
    control_laws, AugmentedState, Computation, GeneralizedPoisson, HorizonRange, InputMean, LqrEvaluator, MetaPolicy,
    Mode, ParamGroup, PolicyConfig, PolicySample,
};
use metampc_core::riccati::to_dvector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, Poisson};

#[test]
fn zero_dispersion_is_poisson() {
    for mu in [0.3, 1.0, 4.5, 20.0, 31.0, 40.0] {
        let gp = GeneralizedPoisson { mu, alpha: 0.0 };
        let oracle = Poisson::new(mu).unwrap();
        for n in 0..120 {
            let (a, b) = (gp.pmf(n), oracle.pmf(n as u64));
            assert!((a - b).abs() < 1e-12, "mu {mu} n {n}: {a} vs {b}");
        }
    }
    assert!((GeneralizedPoisson { mu: 1.0, alpha: 0.0 }.pmf(1) - 0.367_879_441_171_442_3).abs() < 1e-15);
}

#[test]
fn mass_is_complete_over_admissible_dispersion() {
    let range = HorizonRange { min: 1, max: 40 };
    for mu in [0.5, 1.0, 5.0, 10.0, 20.5, 31.0, 40.0] {
        let lowest = range.alpha_floor().max(-0.5 / mu + 1e-9);
        for alpha in [lowest, -0.01, 0.0, 0.02, 0.05, 0.1] {
            let gp = GeneralizedPoisson { mu, alpha: alpha.max(lowest) };
            let mass: f64 = (0..=500).map(|n| gp.pmf(n)).filter(|p| p.is_finite()).sum();
            assert!(mass >= 0.999, "mu {mu} alpha {alpha}: mass {mass}");
            assert!(mass <= 1.0 + 1e-9, "mu {mu} alpha {alpha}: mass {mass}");
        }
    }
}

#[test]
fn normal_approximation_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for alpha in [-0.01, 0.0, 0.02] {
        let gp = GeneralizedPoisson { mu: 20.0, alpha };
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| gp.sample_unclipped(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - gp.mean()).abs() / gp.mean() < 0.01, "alpha {alpha}: mean {mean}");
        assert!((var - gp.variance()).abs() / gp.variance() < 0.05, "alpha {alpha}: var {var} vs {}", gp.variance());
    }
    assert!((GeneralizedPoisson { mu: 20.0, alpha: 0.02 }.variance() - 39.2).abs() < 1e-12);
}

#[test]
fn sampled_horizons_stay_in_range() {
    let range = HorizonRange { min: 1, max: 40 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mu in [1.0, 2.0, 39.0, 40.0] {
        for alpha in [range.alpha_floor(), 0.1] {
            let gp = GeneralizedPoisson { mu, alpha };
            for _ in 0..5000 {
                let n = gp.sample(&range, &mut rng);
                assert!((1..=40).contains(&n));
            }
            assert!((1..=40).contains(&gp.mode(&range)));
        }
    }
}

fn random_policy(ctx: &ControlContext, rng: &mut ChaCha8Rng) -> MetaPolicy {
    let mut policy = MetaPolicy::new(PolicyConfig::default(), ctx.default_weights(), rng);
    let mut p = policy.params();
    for (group, range) in policy.layout() {
        match group {
            ParamGroup::Recompute | ParamGroup::Horizon => {
                for v in &mut p[range] {
                    *v += rng.random_range(-0.05..0.05);
                }
            }
            ParamGroup::Dispersion => p[range.start] = rng.random_range(-0.02..0.05),
            ParamGroup::Lqr => {
                for v in &mut p[range] {
                    *v *= 1.0 + rng.random_range(-0.1..0.1);
                }
            }
            ParamGroup::SigmaMpc | ParamGroup::SigmaDual => p[range.start] = rng.random_range(-2.0..0.0),
        }
    }
    policy.set_params(&p).unwrap();
    policy
}

/// A computation from a random state and a later augmented state using it.
fn random_situation(ctx: &ControlContext, rng: &mut ChaCha8Rng) -> (AugmentedState, Arc<Computation>) {
    let x_i = PlantState::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.6..0.6),
        rng.random_range(-1.0..1.0),
    );
    let reference = rng.random_range(-1.0..1.0);
    let horizon = rng.random_range(3..=40);
    let sol = ctx.ocp.solve(&OcpProblem { x0: x_i, u_prev: 0.0, reference, horizon }, None).unwrap();
    let comp = Arc::new(Computation::new(sol));
    let steps_since = rng.random_range(0..horizon + 4);
    let anchor = if steps_since < horizon { comp.solution.predicted(steps_since) } else { PlantState::steady(reference) };
    let x_t = PlantState::new(
        anchor.psi + rng.random_range(-0.1..0.1),
        anchor.v + rng.random_range(-0.2..0.2),
        anchor.phi + rng.random_range(-0.1..0.1),
        anchor.omega + rng.random_range(-0.2..0.2),
    );
    let s = AugmentedState { x_i, reference_i: reference, horizon_i: horizon, x_t, reference_t: reference, steps_since };
    (s, comp)
}

fn random_sample(
    policy: &MetaPolicy,
    lqr: &mut LqrEvaluator,
    s: &AugmentedState,
    comp: &Arc<Computation>,
    recompute: bool,
    rng: &mut ChaCha8Rng,
) -> PolicySample {
    let gains = lqr.sweep(comp).unwrap().clone();
    let laws = control_laws(s, comp, &gains, lqr.k_inf());
    let features = s.features();
    let (mean, m) = if recompute { (InputMean::Mpc(laws.u_mpc), laws.u_mpc) } else { (laws.dual, laws.u_dual) };
    let horizon = if recompute { policy.horizon_head(&features).unwrap().sample(&policy.range(), rng) } else { s.horizon_i };
    let input = policy.input_distribution(recompute, m).sample(rng);
    PolicySample { features, recompute, horizon, input, mean }
}

#[test]
fn log_prob_is_sum_of_terms() {
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let policy = random_policy(&ctx, &mut rng);
    let mut lqr = ctx.evaluator(&policy.lqr).unwrap();
    for k in 0..20 {
        let (s, comp) = random_situation(&ctx, &mut rng);
        let sample = random_sample(&policy, &mut lqr, &s, &comp, k % 2 == 0, &mut rng);
        let terms = policy.log_prob_terms(&sample, &mut lqr).unwrap();
        let total = policy.log_prob(&sample, &mut lqr).unwrap();
        assert!((total - (terms.recompute + terms.horizon + terms.input)).abs() < 1e-12);
        let bern = policy.recompute_head(&sample.features).unwrap();
        let gp = policy.horizon_head(&sample.features).unwrap();
        let mean = lqr.dual_mean(&sample.mean).unwrap();
        let gauss = policy.input_distribution(sample.recompute, mean);
        let composed = bern.log_prob(sample.recompute) + gp.log_pmf(sample.horizon) + gauss.log_prob(sample.input);
        assert!((total - composed).abs() < 1e-12);
    }
}

#[test]
fn action_density_is_normalized() {
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut policy = MetaPolicy::new(PolicyConfig { n_init: 20.5, c_init: 0.6, ..PolicyConfig::default() }, ctx.default_weights(), &mut rng);
    policy.alpha = 0.01;
    let mut lqr = ctx.evaluator(&policy.lqr).unwrap();
    let (s, comp) = random_situation(&ctx, &mut rng);
    let features = s.features();
    let gains = lqr.sweep(&comp).unwrap().clone();
    let laws = control_laws(&s, &comp, &gains, lqr.k_inf());
    let du = 0.01;
    let mut total = 0.0;
    for recompute in [false, true] {
        let (mean, m) = if recompute { (InputMean::Mpc(laws.u_mpc), laws.u_mpc) } else { (laws.dual.clone(), laws.u_dual) };
        let sigma = policy.input_distribution(recompute, m).std();
        for horizon in policy.range().min..=policy.range().max {
            let steps = (12.0 * sigma / du) as i64;
            for j in -steps..=steps {
                let input = m + j as f64 * du;
                let sample = PolicySample { features: features.clone(), recompute, horizon, input, mean: mean.clone() };
                total += policy.log_prob(&sample, &mut lqr).unwrap().exp() * du;
            }
        }
    }
    assert!((total - 1.0).abs() < 0.02, "{total}");
}

fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(fd).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale.max(1e-8)
}

#[test]
fn log_prob_gradient_matches_differences() {
    let started = std::time::Instant::now();
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let policy = random_policy(&ctx, &mut rng);
    let params = policy.params();
    let h = 1e-6;
    for case in 0..10 {
        let (s, comp) = random_situation(&ctx, &mut rng);
        let mut lqr = ctx.evaluator(&policy.lqr).unwrap();
        let sample = random_sample(&policy, &mut lqr, &s, &comp, case % 3 == 0, &mut rng);
        let mut grad = vec![0.0; params.len()];
        policy.log_prob_grad(&sample, &mut lqr, 1.0, &mut grad).unwrap();

        let eval = |p: &[f64]| {
            let mut probe = policy.clone();
            probe.set_params(p).unwrap();
            let mut l = LqrEvaluator::new(&probe.lqr, &ctx.a_s, &ctx.b_s).unwrap();
            probe.log_prob(&sample, &mut l).unwrap()
        };
        for (group, range) in policy.layout() {
            let fd: Vec<f64> = range
                .clone()
                .map(|i| {
                    let mut up = params.clone();
                    up[i] += h;
                    let mut down = params.clone();
                    down[i] -= h;
                    (eval(&up) - eval(&down)) / (2.0 * h)
                })
                .collect();
            let analytic = &grad[range];
            let inactive = (group == ParamGroup::Lqr && matches!(sample.mean, InputMean::Mpc(_)))
                || (group == ParamGroup::SigmaMpc && !sample.recompute)
                || (group == ParamGroup::SigmaDual && sample.recompute);
            if inactive {
                assert!(analytic.iter().all(|g| *g == 0.0));
                assert!(fd.iter().all(|g| g.abs() < 1e-8), "{group:?} should not depend");
                continue;
            }
            let err = relative_error(analytic, &fd);
            assert!(err < 1e-5, "case {case} {group:?}: relative error {err:e}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn control_laws_at_anchor_and_after_horizon() {
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut lqr = ctx.evaluator(&ctx.default_weights()).unwrap();
    let (mut s, comp) = random_situation(&ctx, &mut rng);
    let gains = lqr.sweep(&comp).unwrap().clone();

    s.steps_since = 0;
    s.x_t = s.x_i;
    let at_anchor = control_laws(&s, &comp, &gains, lqr.k_inf());
    assert_eq!(at_anchor.u_dual, at_anchor.u_mpc);
    assert_eq!(at_anchor.u_mpc, comp.solution.u_seq[0]);

    s.steps_since = comp.horizon() + 2;
    let late = control_laws(&s, &comp, &gains, lqr.k_inf());
    assert_eq!(late.u_mpc, 0.0);
    let e = s.x_t.to_vector() - PlantState::steady(s.reference_t).to_vector();
    let expected = -(lqr.k_inf() * to_dvector(&e))[0];
    assert!((late.u_dual - expected).abs() < 1e-14);
    assert!(matches!(late.dual, InputMean::Steady { .. }));
}

#[test]
fn executed_input_is_clamped() {
    assert_eq!(clamp_input(6.3), 5.0);
    assert_eq!(clamp_input(-7.0), -5.0);
    let ctx = common::context();
    let spec = common::episodes(1, 4).remove(0);
    let mut cl = ClosedLoop::start(&ctx, spec, 10).unwrap();
    assert_eq!(cl.apply(&ctx, 6.3).applied, 5.0);
}

#[test]
fn exploitation_is_deterministic_in_horizon_and_input() {
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = random_policy(&ctx, &mut rng);
    let features = vec![0.1; metampc_core::policy::FEATURES];
    let gp = policy.horizon_head(&features).unwrap();
    for _ in 0..50 {
        if let (true, Some(n)) = policy.decide(&features, Mode::Exploit, &mut rng).unwrap() {
            assert_eq!(n, gp.mu.round() as usize);
        }
        assert_eq!(policy.sample_input(false, 0.7, Mode::Exploit, &mut rng), 0.7);
    }
}

#[test]
fn dispersion_clip_keeps_support() {
    let ctx = common::context();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut policy = MetaPolicy::new(PolicyConfig::default(), ctx.default_weights(), &mut rng);
    policy.alpha = -0.5;
    policy.clip_alpha();
    assert!(policy.alpha >= -1.0 / 40.0);
    for n in 1..=40 {
        assert!(GeneralizedPoisson { mu: 40.0, alpha: policy.alpha }.log_pmf(n).is_finite());
    }
}
