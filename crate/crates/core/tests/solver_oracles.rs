mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2xmp_core::comm::{outage_power_gradient, outage_probability, regularized_outage, ChannelParams, CsiEstimate, CsiGrid, Vehicle};
use v2xmp_core::solver::{
    minimize_vehicle_power, outage_weight, power_objective, project_budget, solve_d1, solve_q1_single, MarginMode, PowerSchedule,
    SolverConfig,
};
use v2xmp_core::vehicle::{
    linearize_dynamics, safety_constraints, tracking_cost, ControlBounds, ControlInput, Lane, NeighborSlot, PlanningProblem, Trajectory,
    VehicleState, Weight2,
};

fn random_link(rng: &mut ChaCha8Rng) -> (ChannelParams, CsiEstimate, f64) {
    loop {
        let ch = ChannelParams::new(
            rng.random_range(0.05..0.95),
            rng.random_range(0.5..5.0),
            10f64.powf(rng.random_range(-3.0..0.5)),
            rng.random_range(0.5..4.0),
            0.05,
            0.01,
        )
        .unwrap();
        let csi = CsiEstimate::new(-f64::ln(1.0 - rng.random::<f64>())).unwrap();
        let power = rng.random_range(0.01..1.0);
        let p_out = outage_probability(&ch, csi, power).unwrap();
        if (1e-10..0.999).contains(&p_out) {
            return (ch, csi, power);
        }
    }
}

#[test]
fn power_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (ch, csi, p) = random_link(&mut rng);
        let m_d = rng.random_range(0.05..5.0);
        let rho = rng.random_range(0.5..10.0);
        let h = 1e-6 * p;
        let f = |q: f64| regularized_outage(&ch, csi, q, m_d, rho).unwrap();
        let fd = (f(p + h) - f(p - h)) / (2.0 * h);
        let g = outage_power_gradient(&ch, csi, p, m_d, rho).unwrap();
        let rel = (g - fd).abs() / g.abs().max(fd.abs());
        assert!(rel <= 1e-5, "analytic {g:e} vs finite difference {fd:e}");
    }
}

#[test]
fn projection_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let k = rng.random_range(1..=6);
        let budget = rng.random_range(0.1..3.0);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..2.0)).collect();
        let got = project_budget(&raw, budget, 1e-12);
        let reference = oracles::projection_by_enumeration(&raw, budget);
        for (a, b) in got.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-6, "{raw:?} budget {budget}: {got:?} vs {reference:?}");
        }
        assert!(got.iter().sum::<f64>() <= budget);
    }
}

fn toy_problem() -> PlanningProblem {
    PlanningProblem {
        horizon: 2,
        dt: 1.0,
        w_track: Weight2::identity(),
        w_control: Weight2::identity(),
        targets: vec![(6.0, 0.5), (12.0, 1.0)],
        bounds: ControlBounds::new(0.0, 15.0, -0.5, 0.5).unwrap(),
        safe_distance: 8.7,
        rho: vec![1.0, 10.0],
        lanes: vec![Lane::Ego, Lane::Ego],
        neighbors: vec![
            NeighborSlot { lead: 14.0, target: 60.0, follow: -60.0 },
            NeighborSlot { lead: 19.0, target: 60.0, follow: -60.0 },
        ],
        initial_state: VehicleState::new(0.0, 0.0, 0.0),
        prev_control: ControlInput { v: 5.0, omega: 0.0 },
    }
}

fn noisy_channel() -> ChannelParams {
    ChannelParams::new(0.3, 3.5, 0.5, 2.0, 0.05, 0.01).unwrap()
}

#[test]
fn trajectory_block_matches_grid_search() {
    let problem = toy_problem();
    let ch = noisy_channel();
    let csi = CsiGrid::uniform(2, CsiEstimate::new(1.0).unwrap());
    let powers = PowerSchedule::uniform(2, 1.0);
    let config = SolverConfig::default();
    let cruise = [ControlInput { v: 6.0, omega: 0.0 }; 2];
    let reference = Trajectory::rollout(problem.initial_state, &cruise, problem.dt, 1.0);
    let solved = solve_d1(&problem, &ch, &csi, &powers, &reference, MarginMode::Optimize, &config).unwrap();

    let eta = outage_weight(&problem, &ch, &csi, &powers).unwrap();
    assert!(eta > 0.1, "toy must make the margin matter");
    let lin = linearize_dynamics(&reference, problem.dt);
    let objective = |z: &[f64]| -> Option<f64> {
        let controls = [ControlInput { v: z[0], omega: z[2] }, ControlInput { v: z[1], omega: z[3] }];
        let m_d = z[4];
        let traj = lin.rollout(problem.initial_state, &controls, m_d);
        let safe = safety_constraints(&problem, m_d).iter().all(|c| c.slack(traj.states[c.slot].x) >= 0.0);
        safe.then(|| tracking_cost(&problem, &traj).unwrap() + eta / (1.0 - f64::exp(-m_d)))
    };
    let (grid_z, grid_f) =
        oracles::refine_grid(&objective, &[0.0, 0.0, -0.5, -0.5, 1e-6], &[15.0, 15.0, 0.5, 0.5, 5.0], 9, 0.6, 1e-3);

    let t = &solved.trajectory;
    let solver_z = [t.controls[0].v, t.controls[1].v, t.controls[0].omega, t.controls[1].omega, t.margin];
    let solver_f = objective(&solver_z).expect("solver point is feasible");
    assert!(solver_f <= grid_f + 1e-9, "solver {solver_f} vs grid {grid_f}");
    assert!(grid_f - solver_f <= 1e-3, "grid {grid_f} far above solver {solver_f}: {grid_z:?} vs {solver_z:?}");
    for (a, b) in solver_z.iter().zip(&grid_z) {
        assert!((a - b).abs() <= 2e-3, "solver {solver_z:?} vs grid {grid_z:?}");
    }
}

#[test]
fn power_block_matches_simplex_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ch = noisy_channel();
    let mut problem = toy_problem();
    problem.horizon = 3;
    problem.rho = vec![1.0, 10.0, 10.0];
    let config = SolverConfig::default();
    for _ in 0..3 {
        let rows: [Vec<CsiEstimate>; 3] =
            std::array::from_fn(|_| (0..3).map(|_| CsiEstimate::new(-f64::ln(1.0 - rng.random::<f64>())).unwrap()).collect());
        let csi = CsiGrid::new(rows).unwrap();
        let solved = solve_q1_single(&problem, &ch, &csi, Vehicle::Follow, 1.0, 1.0, &config).unwrap();
        let f = |p: &[f64]| power_objective(&ch, csi.row(Vehicle::Follow), &problem.rho, 1.0, p).unwrap();
        let (grid_p, grid_f) = oracles::simplex_grid_3(&f, 1.0, 1000);
        let solver_f = f(&solved.powers);
        assert!(solver_f <= grid_f * (1.0 + 1e-12), "solver {solver_f} vs grid {grid_f}");
        for (a, b) in solved.powers.iter().zip(&grid_p) {
            assert!((a - b).abs() <= 2e-3, "solver {:?} vs grid {grid_p:?}", solved.powers);
        }
    }
}

#[test]
fn power_solve_reaches_stationarity_within_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = SolverConfig::default();
    for _ in 0..40 {
        let (ch, _, _) = random_link(&mut rng);
        let k = rng.random_range(1..=6);
        let csi: Vec<CsiEstimate> = (0..k).map(|_| CsiEstimate::new(-f64::ln(1.0 - rng.random::<f64>())).unwrap()).collect();
        let rho: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..10.0)).collect();
        let budget = rng.random_range(0.1..2.0);
        let out = minimize_vehicle_power(&ch, &csi, &rho, 1.0, budget, &config).unwrap();
        assert!(out.powers.iter().all(|p| *p >= 0.0));
        assert!(out.powers.iter().sum::<f64>() <= budget + 1e-9);
        assert!(out.stationarity <= 1e-5, "stationarity {:e}", out.stationarity);
        assert!(out.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }
}
