use v2xmp_core::comm::{position_error_bound, Vehicle};
use v2xmp_core::sim::{
    baseline_policy, build_planning_inputs, dbm_to_watts, kmh_to_ms, run_trial, trial_rng, ErrorModel, Policy, ScenarioConfig,
};
use v2xmp_core::solver::{joint_objective, run_bcd, PowerSchedule, SolverConfig};
use v2xmp_core::vehicle::{tracking_cost, ControlInput, Lane};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn default_scenario_geometry() {
    let c = ScenarioConfig::default();
    assert_eq!(c.starts, [(20.0, 1.85), (30.0, 1.85), (40.0, 5.55), (13.0, 5.55)]);
    assert!(close(kmh_to_ms(7.2), 2.0, 1e-15));
    assert!(close(c.ego_speed(), 2.0, 1e-15));
    assert_eq!(c.lane_width, 3.72);
    assert_eq!(Lane::of(1.85, c.lane_boundary()), Lane::Ego);
    assert_eq!(Lane::of(5.55, c.lane_boundary()), Lane::Target);
    assert!(close(c.budget, 1.0, 1e-15));
    assert!(close(dbm_to_watts(20.0), 0.1, 1e-15));
    assert_eq!(c.rho, vec![1.0, 10.0, 10.0, 10.0, 10.0, 10.0]);
    assert_eq!(c.waypoint(2).1, 1.85);
    assert!(close(c.waypoint(3).1, 3.7, 1e-12));
    assert_eq!(c.waypoint(4).1, 5.55);
}

#[test]
fn identical_seeds_give_identical_trials() {
    let solver = SolverConfig::default();
    for policy in Policy::ALL {
        let c = ScenarioConfig { policy, seed: 42, ..ScenarioConfig::default() };
        assert_eq!(run_trial(&c, &solver, 3).unwrap(), run_trial(&c, &solver, 3).unwrap());
    }
}

#[test]
fn delivered_positions_stay_within_error_bound() {
    let solver = SolverConfig::default();
    let mut c = ScenarioConfig::default();
    c.channel = c.channel.with_sigma_sq(dbm_to_watts(-50.0) * 10e6).unwrap();
    for policy in Policy::ALL {
        c.policy = policy;
        for trial in 0..5 {
            let r = run_trial(&c, &solver, trial).unwrap();
            let mut speed = c.ego_speed();
            for s in &r.slots {
                for v in Vehicle::ALL {
                    let bound = position_error_bound(&c.channel, s.outage[v.index()], speed);
                    assert!((s.delivered.get(v) - s.truth.get(v)).abs() <= bound * (1.0 + 1e-12) + 1e-12);
                }
                speed = s.control.v;
            }
            assert_eq!(r.collision(), r.collision_slot.is_some());
        }
    }
}

#[test]
fn worst_case_errors_push_neighbours_away() {
    let solver = SolverConfig::default();
    let mut c = ScenarioConfig { error_model: ErrorModel::WorstCase, ..ScenarioConfig::default() };
    c.channel = c.channel.with_sigma_sq(dbm_to_watts(-50.0) * 10e6).unwrap();
    let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
    let inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(0, 0)).unwrap();
    for (k, nb) in inputs.problem.neighbors.iter().enumerate() {
        let truth = c.neighbors_at(k + 1);
        assert!(nb.lead > truth.lead && nb.target > truth.target && nb.follow < truth.follow);
    }
}

#[test]
fn baselines_use_uniform_powers_and_drop_outage_term() {
    let solver = SolverConfig::default();
    let (rho, _) = baseline_policy(Policy::NoUncertainty, &[1.0, 10.0]);
    assert_eq!(rho, vec![0.0, 0.0]);
    for policy in [Policy::NoUncertainty, Policy::ConstantPower] {
        let c = ScenarioConfig { policy, ..ScenarioConfig::default() };
        let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
        let inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(0, 0)).unwrap();
        for v in Vehicle::ALL {
            assert!(inputs.powers.row(v).iter().all(|p| *p == c.budget / c.horizon as f64));
        }
    }
}

#[test]
fn emitted_power_schedules_respect_budget() {
    let solver = SolverConfig::default();
    let c = ScenarioConfig::default();
    let mut rng = trial_rng(9, 0);
    for t in 0..5 {
        let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
        let inputs = build_planning_inputs(&c, &solver, t, c.ego_start(), prev, &mut rng).unwrap();
        inputs.powers.validate(1e-9).unwrap();
        for v in Vehicle::ALL {
            assert!(inputs.powers.row(v).iter().sum::<f64>() <= c.budget + 1e-9);
        }
    }
}

#[test]
fn perfect_csi_run_changes_lane_safely() {
    let solver = SolverConfig::default();
    let mut c = ScenarioConfig { budget: dbm_to_watts(40.0), ..ScenarioConfig::default() };
    c.channel = c.channel.with_beta(1.0).unwrap();
    for trial in 0..3 {
        let r = run_trial(&c, &solver, trial).unwrap();
        assert!(!r.collision());
        assert!(r.reached_target_lane(c.lane_boundary()));
    }
}

#[test]
fn nominal_bcd_trace_settles_monotonically() {
    let solver = SolverConfig::default();
    let c = ScenarioConfig::default();
    let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
    let inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(0, 0)).unwrap();
    let out = run_bcd(&inputs.problem, &c.channel, &inputs.csi, c.budget, &solver).unwrap();
    assert!(out.trace.converged);
    assert!(out.trace.rows.len() <= solver.bcd_max_iter);

    let long = SolverConfig { bcd_tol: 1e-10, ..solver };
    let obj = run_bcd(&inputs.problem, &c.channel, &inputs.csi, c.budget, &long).unwrap().trace.objectives();
    let steps: Vec<f64> = obj.windows(2).map(|w| w[1] - w[0]).collect();
    let tail = &steps[steps.len() - 8..];
    assert!(tail.windows(2).all(|w| w[0].signum() == w[1].signum() && w[1].abs() <= w[0].abs() + 1e-6), "{obj:?}");
}

#[test]
fn power_block_never_raises_the_objective_at_fixed_trajectory() {
    let solver = SolverConfig::default();
    let c = ScenarioConfig::default();
    let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
    let inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(1, 0)).unwrap();
    let out = run_bcd(&inputs.problem, &c.channel, &inputs.csi, c.budget, &solver).unwrap();
    let uniform = PowerSchedule::uniform(c.horizon, c.budget);
    let before = joint_objective(&inputs.problem, &c.channel, &inputs.csi, &uniform, &out.trajectory).unwrap();
    let after = joint_objective(&inputs.problem, &c.channel, &inputs.csi, &out.powers, &out.trajectory).unwrap();
    assert!(after <= before);
}

#[test]
fn high_penalty_slots_receive_most_power() {
    let solver = SolverConfig::default();
    let c = ScenarioConfig::default();
    let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
    for seed in 0..5 {
        let inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(seed, 0)).unwrap();
        let out = run_bcd(&inputs.problem, &c.channel, &inputs.csi, c.budget, &solver).unwrap();
        for v in Vehicle::ALL {
            let row = out.powers.row(v);
            assert!(row[1..].iter().sum::<f64>() > row[0]);
        }
    }
}

#[test]
fn zero_penalties_reduce_to_tracking_mpc() {
    let solver = SolverConfig::default();
    let c = ScenarioConfig::default();
    let prev = ControlInput { v: c.ego_speed(), omega: 0.0 };
    let mut inputs = build_planning_inputs(&c, &solver, 0, c.ego_start(), prev, &mut trial_rng(0, 0)).unwrap();
    inputs.problem.rho = vec![0.0; c.horizon];
    let out = run_bcd(&inputs.problem, &c.channel, &inputs.csi, c.budget, &solver).unwrap();
    assert_eq!(out.powers, PowerSchedule::uniform(c.horizon, c.budget));
    assert_eq!(out.trajectory.margin, solver.md_floor);
    let tracking = tracking_cost(&inputs.problem, &out.trajectory).unwrap();
    assert!((out.trace.objectives().last().unwrap() - tracking).abs() <= 1e-12 * tracking);
}
