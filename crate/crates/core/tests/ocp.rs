use metampc_core::ocp::{
    linearize, linearize_steady, shift_warm_start, write_diagnostics, LinearModel, Ocp, OcpError,
    OcpProblem, PendulumModel, PendulumOcp, PredictionModel, QuadraticCost, SolveRecord, SolverSettings,
};
use metampc_core::plant::{sample_initial, step, PendulumParams, PlantState, StageCost};
use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pendulum_ocp() -> PendulumOcp {
    PendulumOcp::pendulum(PendulumParams::mpc_model(), StageCost::default(), 1.0, SolverSettings::default())
}

/// Upright linearization of the MPC model, central differences in 40-digit arithmetic.
fn upright_oracle() -> (Matrix4<f64>, Vector4<f64>) {
    let a = Matrix4::new(
        1.0,
        3.999_434_335_551_896_3e-2,
        -4.764_921_649_464_933_9e-4,
        -5.367_621_932_106_288_7e-6,
        0.0,
        9.997_171_466_515_638_6e-1,
        -2.387_419_390_619_757e-2,
        -4.278_189_867_483_332_2e-4,
        0.0,
        9.714_417_226_228_203_5e-6,
        1.014_296_032_761_125_7,
        4.016_103_875_686_411_6e-2,
        0.0,
        4.867_317_819_816_018_3e-4,
        7.163_211_156_189_164_3e-1,
        1.012_835_643_126_836_4,
    );
    let b = Vector4::new(
        0.000_565_664_448_103_8,
        0.028_285_334_843_617_98,
        -0.000_971_441_722_622_82,
        -0.048_673_178_198_160_18,
    );
    (a, b)
}

#[test]
fn equilibrium_instance_returns_zero_input() {
    let ocp = pendulum_ocp();
    for reference in [0.0, 0.5] {
        let problem = OcpProblem { x0: PlantState::steady(reference), u_prev: 0.0, reference, horizon: 20 };
        let sol = ocp.solve(&problem, None).unwrap();
        assert!(sol.is_converged());
        assert!(sol.u_seq.iter().all(|u| u.abs() < 1e-4), "{:?}", sol.u_seq);
        for x in &sol.x_pred {
            assert!((x - PlantState::steady(reference).to_vector()).amax() < 1e-4);
        }
    }
}

#[test]
fn two_step_linear_instance_matches_active_set_oracle() {
    let (a, b) = upright_oracle();
    let mut q = Matrix4::from_diagonal(&Vector4::new(10.0, 0.75, 200.0, 0.05));
    q[(1, 3)] = 0.02;
    q[(3, 1)] = 0.02;
    let ocp = Ocp {
        model: LinearModel { a, b },
        cost: QuadraticCost { q },
        input_change_weight: 0.1,
        discount: 1.0,
        input_limit: 5.0,
        position_limit: 2.0,
        settings: SolverSettings::default(),
    };
    // (x0, reference, u*, x1*, x2*), solved by enumerating all active sets
    let cases = [
        (
            PlantState::new(0.0, 0.0, 0.5, 0.0),
            0.0,
            [4.456_959_513_272_555_5, 5.0],
            [0.002_282_897_460_823_04, 0.114_129_495_264_264_1, 0.502_818_339_953_329_4, 0.141_226_173_197_957_88],
            [0.009_435_406_873_849_27, 0.243_459_085_786_505_32, 0.510_822_337_317_904_3, 0.259_907_955_648_121_75],
        ),
        (
            PlantState::new(1.9, 1.3, 0.0, 0.0),
            1.9,
            [-1.637_961_705_044_071_6, -2.103_551_777_860_285_5],
            [1.951_066_109_658_275_8, 1.253_301_995_358_838_7, 1.603_813_082_732_323_8e-3, 8.035_755_326_794_845_3e-2],
            [2.0, 1.193_375_160_063_640_6, 0.006_909_637_119_510_91, 0.185_534_411_767_321_08],
        ),
    ];
    for (x0, reference, u, x1, x2) in cases {
        let problem = OcpProblem { x0, u_prev: 0.0, reference, horizon: 2 };
        let sol = ocp.solve(&problem, None).unwrap();
        assert!(sol.is_converged());
        for k in 0..2 {
            assert!((sol.u_seq[k] - u[k]).abs() < 1e-5, "u{k}: {} vs {}", sol.u_seq[k], u[k]);
        }
        assert!((sol.x_pred[1] - Vector4::from(x1)).amax() < 1e-5);
        assert!((sol.x_pred[2] - Vector4::from(x2)).amax() < 1e-5);
    }
}

#[test]
fn upright_linearization_matches_oracles() {
    let model = PendulumModel::new(PendulumParams::mpc_model());
    let (a, b) = linearize_steady(&model, &Vector4::zeros(), 0.0);
    let (a_ref, b_ref) = upright_oracle();
    assert!((a - a_ref).amax() < 1e-12);
    assert!((b - b_ref).amax() < 1e-12);
    let h = 1e-6;
    for j in 0..4 {
        let mut e = Vector4::zeros();
        e[j] = h;
        let col = (model.step(&e, 0.0) - model.step(&(-e), 0.0)) / (2.0 * h);
        assert!((col - a.column(j)).amax() < 1e-6);
    }
    // a positive push accelerates the cart forward
    assert!(b[1] > 0.0);
    assert!((b[1] - 0.028_285_334_843_617_98).abs() < 1e-12);
}

#[test]
fn trajectory_linearization_is_first_order_accurate() {
    let ocp = pendulum_ocp();
    let problem = OcpProblem { x0: PlantState::new(0.0, 0.3, 2.5, -0.4), u_prev: 0.0, reference: 0.2, horizon: 15 };
    let sol = ocp.solve(&problem, None).unwrap();
    let (a_seq, b_seq) = linearize(&ocp.model, &sol.x_pred, &sol.u_seq);
    assert_eq!(a_seq.len(), 15);
    for k in 0..15 {
        assert!((a_seq[k] - sol.a_seq[k]).amax() < 1e-12);
        assert!((b_seq[k] - sol.b_seq[k]).amax() < 1e-12);
        let x = sol.x_pred[k];
        for &d in &[1e-3, 5e-4] {
            let dx = Vector4::new(d, -d, d, 0.5 * d);
            let err = (ocp.model.step(&(x + dx), sol.u_seq[k]) - ocp.model.step(&x, sol.u_seq[k]) - a_seq[k] * dx).amax();
            assert!(err < 50.0 * d * d, "k={k} d={d} err={err}");
        }
    }
}

#[test]
fn swing_up_solutions_satisfy_contracts() {
    let ocp = pendulum_ocp();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [1, 5, 17, 31, 40] {
        for _ in 0..6 {
            let x0 = sample_initial(&mut rng);
            let problem = OcpProblem { x0, u_prev: 0.3, reference: 0.4, horizon: n };
            let sol = ocp.solve(&problem, None).unwrap();
            assert!(sol.is_converged(), "N={n} {x0:?}");
            assert!(sol.kkt_residual <= 1e-6);
            assert_eq!(sol.u_seq.len(), n);
            assert_eq!(sol.x_pred.len(), n + 1);
            assert_eq!(sol.x_pred[0], x0.to_vector());
            assert!(sol.u_seq.iter().all(|u| u.abs() <= 5.0));
            assert!(sol.x_pred.iter().all(|x| x[0].abs() <= 2.0));
            for k in 0..n {
                let defect = (ocp.model.step(&sol.x_pred[k], sol.u_seq[k]) - sol.x_pred[k + 1]).amax();
                assert!(defect <= 1e-6);
            }
        }
    }
}

#[test]
fn infeasible_start_is_reported() {
    let ocp = pendulum_ocp();
    let problem = OcpProblem { x0: PlantState::new(2.1, 0.0, 0.0, 0.0), u_prev: 0.0, reference: 0.0, horizon: 10 };
    assert_eq!(ocp.solve(&problem, None), Err(OcpError::Infeasible(2.1)));
    let problem = OcpProblem { horizon: 0, x0: PlantState::UPRIGHT, ..problem };
    assert_eq!(ocp.solve(&problem, None), Err(OcpError::EmptyHorizon));
}

#[test]
fn shift_drops_consumed_inputs() {
    let ocp = pendulum_ocp();
    let problem = OcpProblem { x0: PlantState::new(0.0, 0.0, 3.0, 0.0), u_prev: 0.0, reference: 0.0, horizon: 12 };
    let sol = ocp.solve(&problem, None).unwrap();

    let warm = shift_warm_start(&sol, 1, 12);
    assert_eq!(warm.inputs.len(), 12);
    for k in 0..11 {
        assert_eq!(warm.inputs[k], sol.u_seq[k + 1]);
        assert_eq!(warm.states[k], sol.x_pred[k + 2]);
    }
    assert_eq!(warm.inputs[11], sol.u_seq[11]);
    assert_eq!(warm.states[11], sol.x_pred[12]);

    let longer = shift_warm_start(&sol, 3, 15);
    assert_eq!(longer.inputs.len(), 15);
    assert_eq!(longer.inputs[14], sol.u_seq[11]);
    let shorter = shift_warm_start(&sol, 2, 4);
    assert_eq!(shorter.inputs, sol.u_seq[2..6].to_vec());

    let consumed = shift_warm_start(&sol, 12, 12);
    assert_eq!(consumed.inputs, vec![0.0; 12]);
    assert!(consumed.states.is_empty());
}

#[test]
fn warm_start_reduces_iterations_on_swing_up() {
    let ocp = pendulum_ocp();
    let plant = PendulumParams::plant();
    let mut x = PlantState::new(0.0, 0.2, 3.0, -0.3);
    let mut u_prev = 0.0;
    let mut previous = None;
    let (mut cold, mut warm) = (0, 0);
    for _ in 0..40 {
        let problem = OcpProblem { x0: x, u_prev, reference: 0.0, horizon: 31 };
        let cold_sol = ocp.solve(&problem, None).unwrap();
        let guess = previous.as_ref().map(|s| shift_warm_start(s, 1, 31));
        let sol = ocp.solve(&problem, guess.as_ref()).unwrap();
        if previous.is_some() {
            cold += cold_sol.iterations;
            warm += sol.iterations;
        }
        u_prev = sol.u_seq[0];
        x = step(&x, u_prev, &plant);
        previous = Some(sol);
    }
    assert!(warm < cold, "warm {warm} vs cold {cold}");
}

#[test]
fn equilibrium_cost_does_not_increase_with_horizon() {
    let ocp = pendulum_ocp();
    let mut last = f64::INFINITY;
    for n in 1..=40 {
        let problem = OcpProblem { x0: PlantState::steady(0.3), u_prev: 0.0, reference: 0.3, horizon: n };
        let sol = ocp.solve(&problem, None).unwrap();
        assert!(sol.objective <= last + 1e-6);
        last = sol.objective;
    }
}

#[test]
fn prediction_diverges_from_true_plant_on_swing_up() {
    let ocp = pendulum_ocp();
    let plant = PendulumParams::plant();
    let x0 = PlantState::new(0.0, 0.0, 3.0, 0.0);
    let problem = OcpProblem { x0, u_prev: 0.0, reference: 0.0, horizon: 31 };
    let sol = ocp.solve(&problem, None).unwrap();
    let mut x = x0;
    let mut divergence = 0.0_f64;
    for k in 0..31 {
        x = step(&x, sol.u_seq[k], &plant);
        divergence = divergence.max((x.to_vector() - sol.x_pred[k + 1]).amax());
    }
    assert!(divergence > 1e-2, "{divergence}");
}

#[test]
fn diagnostics_csv_has_one_row_per_solve() {
    let ocp = pendulum_ocp();
    let problem = OcpProblem { x0: PlantState::new(0.0, 0.0, 1.0, 0.0), u_prev: 0.0, reference: 0.0, horizon: 8 };
    let sol = ocp.solve(&problem, None).unwrap();
    let records = vec![SolveRecord::new(0, &sol), SolveRecord::new(1, &sol)];
    let mut buf = Vec::new();
    write_diagnostics(&records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,N,iterations,kkt_residual,solve_time");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,8,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_never_worsens_a_feasible_rollout(
        v in -1.0..1.0f64,
        phi in -3.1..3.1f64,
        omega in -1.0..1.0f64,
        reference in -1.0..1.0f64,
        n in 1usize..=40,
    ) {
        let ocp = pendulum_ocp();
        let x0 = PlantState::new(0.0, v, phi, omega);
        let problem = OcpProblem { x0, u_prev: 0.0, reference, horizon: n };
        let sol = ocp.solve(&problem, None).unwrap();
        let zeros = vec![0.0; n];
        let rollout = ocp.simulate(&x0.to_vector(), &zeros);
        prop_assume!(rollout.iter().all(|x| x[0].abs() < 1.98));
        let guess = ocp.objective(&rollout, &zeros, 0.0, reference);
        prop_assert!(sol.objective <= guess + 1e-6, "{} > {}", sol.objective, guess);
        prop_assert!(sol.u_seq.iter().all(|u| u.abs() <= 5.0));
    }
}
