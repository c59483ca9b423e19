//! CSV and JSON artifacts.
//!
//! Every CSV starts with the line `# schema=1` followed by a header row. Columns:
//!
//! `trajectory.csv`: `policy, slot, ego_x, ego_y, ego_theta, ego_v, ego_omega,
//! lv_x, lv_y, tv_x, tv_y, fv_x, fv_y, m_d, collision`. Slot 0 is the initial
//! state, and its `ego_v` and `ego_omega` hold the control in force before
//! planning. For `solve` the neighbour columns are the delivered positions the
//! plan used; for `trial` they are ground truth.
//!
//! `trace.csv`: `policy, plan_slot, iteration, objective, margin`, one row per
//! BCD outer iteration of every planning call.
//!
//! `trials.csv`: `trial, slot, policy, ego_x, ego_y, ego_theta, ego_v,
//! ego_omega, power_lv, power_tv, power_fv, p_out_lv, p_out_tv, p_out_fv, m_d,
//! collision, fallback, sweep_value`, one row per executed slot. `collision` is
//! 1 only on the trial's first colliding slot; `sweep_value` is empty without a sweep.
//!
//! Flags are written as 0/1. All files of one command are rendered in memory
//! first and then moved into place one by one through a temporary file in the
//! output directory, so an interrupted run never leaves a truncated file.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use v2xmp_core::comm::Vehicle;
use v2xmp_core::sim::{CollisionStats, ScenarioConfig, TrialResult};
use v2xmp_core::vehicle::{detect_collision, NeighborSlot, VehicleState};

use crate::config::{ConfigFile, Overrides, RunConfig};
use crate::runner::{Point, Solved};
use crate::Result;

/// Version written into every artifact.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    policy: &'static str,
    slot: usize,
    ego_x: f64,
    ego_y: f64,
    ego_theta: f64,
    ego_v: f64,
    ego_omega: f64,
    lv_x: f64,
    lv_y: f64,
    tv_x: f64,
    tv_y: f64,
    fv_x: f64,
    fv_y: f64,
    m_d: f64,
    collision: u8,
}

#[derive(Debug, Serialize)]
struct TraceCsvRow {
    policy: &'static str,
    plan_slot: usize,
    iteration: usize,
    objective: f64,
    margin: f64,
}

#[derive(Debug, Serialize)]
struct TrialRow {
    trial: usize,
    slot: usize,
    policy: &'static str,
    ego_x: f64,
    ego_y: f64,
    ego_theta: f64,
    ego_v: f64,
    ego_omega: f64,
    power_lv: f64,
    power_tv: f64,
    power_fv: f64,
    p_out_lv: f64,
    p_out_tv: f64,
    p_out_fv: f64,
    m_d: f64,
    collision: u8,
    fallback: u8,
    sweep_value: Option<f64>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = format!("# schema={SCHEMA}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

#[allow(clippy::too_many_arguments)]
fn trajectory_row(
    policy: &'static str,
    slot: usize,
    ego: VehicleState,
    v: f64,
    omega: f64,
    nb: NeighborSlot,
    scenario: &ScenarioConfig,
    m_d: f64,
    collision: bool,
) -> TrajectoryRow {
    let y = |i: usize| scenario.starts[i].1;
    TrajectoryRow {
        policy,
        slot,
        ego_x: ego.x,
        ego_y: ego.y,
        ego_theta: ego.theta,
        ego_v: v,
        ego_omega: omega,
        lv_x: nb.lead,
        lv_y: y(1),
        tv_x: nb.target,
        tv_y: y(2),
        fv_x: nb.follow,
        fv_y: y(3),
        m_d,
        collision: u8::from(collision),
    }
}

/// Files produced by one command, written together by [`Artifacts::write`].
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    /// Adds a file.
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_owned(), bytes));
    }

    /// File names in the order they were added.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Creates `dir` if needed and moves every file into it through a temporary file.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            let target = dir.join(name);
            tmp.persist(&target).map_err(|e| e.error)?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Renders `solve` results.
pub fn solve_artifacts(run: &RunConfig, overrides: &Overrides, solved: &[Solved]) -> Result<Artifacts> {
    let s = &run.scenario;
    let mut trajectory = Vec::new();
    let mut trace = Vec::new();
    let mut results = Vec::new();
    for sol in solved {
        let name = sol.policy.name();
        let traj = &sol.outcome.trajectory;
        let problem = &sol.inputs.problem;
        let collision = detect_collision(&traj.states[1..], &problem.neighbors, s.lane_boundary(), s.collision_distance);
        let prev = problem.prev_control;
        trajectory.push(trajectory_row(name, 0, traj.states[0], prev.v, prev.omega, s.neighbors_at(0), s, traj.margin, false));
        for (k, (state, u)) in traj.states[1..].iter().zip(&traj.controls).enumerate() {
            let nb = problem.neighbors[k];
            trajectory.push(trajectory_row(name, k + 1, *state, u.v, u.omega, nb, s, traj.margin, collision == Some(k)));
        }
        for row in &sol.outcome.trace.rows {
            trace.push(TraceCsvRow { policy: name, plan_slot: 0, iteration: row.iteration, objective: row.objective, margin: row.margin });
        }
        results.push(serde_json::json!({
            "policy": name,
            "objective": sol.outcome.trace.objectives().last(),
            "margin": traj.margin,
            "converged": sol.outcome.trace.converged,
            "iterations": sol.outcome.trace.rows.len(),
            "powers": Vehicle::ALL.map(|v| sol.outcome.powers.row(v).to_vec()),
            "outage": sol.inputs.outage,
            "timings": sol.outcome.trace.rows.iter().map(|r| serde_json::json!({
                "iteration": r.iteration,
                "trajectory_seconds": r.trajectory_seconds,
                "power_seconds": r.power_seconds,
            })).collect::<Vec<_>>(),
        }));
    }
    let mut out = Artifacts::default();
    out.add("trajectory.csv", csv_bytes(trajectory)?);
    out.add("trace.csv", csv_bytes(trace)?);
    out.add("summary.json", summary("solve", run, overrides, serde_json::Value::Array(results))?);
    Ok(out)
}

fn trial_rows(result: &TrialResult, sweep_value: Option<f64>) -> impl Iterator<Item = TrialRow> + '_ {
    result.slots.iter().map(move |s| TrialRow {
        trial: result.trial,
        slot: s.slot,
        policy: result.policy.name(),
        ego_x: s.ego.x,
        ego_y: s.ego.y,
        ego_theta: s.ego.theta,
        ego_v: s.control.v,
        ego_omega: s.control.omega,
        power_lv: s.powers[Vehicle::Lead.index()],
        power_tv: s.powers[Vehicle::Target.index()],
        power_fv: s.powers[Vehicle::Follow.index()],
        p_out_lv: s.outage[Vehicle::Lead.index()],
        p_out_tv: s.outage[Vehicle::Target.index()],
        p_out_fv: s.outage[Vehicle::Follow.index()],
        m_d: s.margin,
        collision: u8::from(result.collision_slot == Some(s.slot)),
        fallback: u8::from(s.fallback),
        sweep_value,
    })
}

fn trace_rows(result: &TrialResult) -> impl Iterator<Item = TraceCsvRow> + '_ {
    result.plans.iter().flat_map(move |p| {
        p.trace().into_iter().flat_map(move |t| {
            t.rows.iter().map(move |r| TraceCsvRow {
                policy: result.policy.name(),
                plan_slot: p.slot,
                iteration: r.iteration,
                objective: r.objective,
                margin: r.margin,
            })
        })
    })
}

fn stats_json(stats: &CollisionStats) -> serde_json::Value {
    serde_json::json!({
        "trials": stats.trials,
        "collisions": stats.collisions,
        "ratio": stats.ratio,
        "confidence_halfwidth": stats.confidence_halfwidth,
    })
}

/// Renders `trial` results.
pub fn trial_artifacts(run: &RunConfig, overrides: &Overrides, results: &[TrialResult]) -> Result<Artifacts> {
    let s = &run.scenario;
    let mut trajectory = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        let name = r.policy.name();
        let (ego0, nb0) = r.initial;
        trajectory.push(trajectory_row(name, 0, ego0, s.ego_speed(), 0.0, nb0, s, 0.0, false));
        for slot in &r.slots {
            let hit = r.collision_slot == Some(slot.slot);
            trajectory.push(trajectory_row(name, slot.slot, slot.ego, slot.control.v, slot.control.omega, slot.truth, s, slot.margin, hit));
        }
        summaries.push(serde_json::json!({
            "policy": name,
            "collision": r.collision(),
            "collision_slot": r.collision_slot,
            "reached_target_lane": r.reached_target_lane(s.lane_boundary()),
            "fallback_slots": r.slots.iter().filter(|x| x.fallback).count(),
        }));
    }
    let mut out = Artifacts::default();
    out.add("trajectory.csv", csv_bytes(trajectory)?);
    out.add("trace.csv", csv_bytes(results.iter().flat_map(trace_rows))?);
    out.add("trials.csv", csv_bytes(results.iter().flat_map(|r| trial_rows(r, None)))?);
    out.add("summary.json", summary("trial", run, overrides, serde_json::Value::Array(summaries))?);
    Ok(out)
}

/// Renders `montecarlo` results.
pub fn montecarlo_artifacts(run: &RunConfig, overrides: &Overrides, points: &[Point]) -> Result<Artifacts> {
    let results: Vec<serde_json::Value> = points
        .iter()
        .map(|p| {
            serde_json::json!({
                "sweep": run.sweep.as_ref().zip(p.sweep_value).map(|(s, v)| serde_json::json!({ "key": s.key.name(), "value": v })),
                "policy": p.policy.name(),
                "stats": stats_json(&p.stats),
                "mean_outage": p.mean_outage(),
                "mean_margin": p.mean_margin(),
                "fallback_slots": p.fallback_slots(),
                "mean_objective_trace": p.mean_objective_trace(),
            })
        })
        .collect();
    let rows = points.iter().flat_map(|p| p.trials.iter().flat_map(move |t| trial_rows(t, p.sweep_value)));
    let mut out = Artifacts::default();
    out.add("trials.csv", csv_bytes(rows)?);
    out.add("summary.json", summary("montecarlo", run, overrides, serde_json::Value::Array(results))?);
    Ok(out)
}

fn summary(command: &str, run: &RunConfig, overrides: &Overrides, results: serde_json::Value) -> Result<Vec<u8>> {
    let value = serde_json::json!({
        "schema": SCHEMA,
        "command": command,
        "config": ConfigFile::describe(run),
        "overrides": overrides,
        "results": results,
    });
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Machine-readable description of a failed command.
pub fn error_json(err: &crate::Error) -> String {
    let mut value = serde_json::json!({ "schema": SCHEMA, "error": err.kind(), "message": err.to_string() });
    match err {
        crate::Error::Core(v2xmp_core::Error::Infeasible { constraint, slot }) => {
            value["constraint"] = serde_json::json!(constraint);
            value["slot"] = serde_json::json!(slot);
        }
        crate::Error::Config { path, .. } => value["path"] = serde_json::json!(path),
        _ => {}
    }
    value.to_string()
}
