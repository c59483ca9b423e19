//! Run configuration: a TOML file with `[scenario]`, `[channel]`, `[solver]`
//! and `[run]` sections, overlaid by command-line flags.
//!
//! Every key is optional and falls back to the nominal scenario. Unknown keys
//! are rejected. Powers may be given in watts (`budget`, `sigma_sq`) or in dBm
//! with a `_dbm` suffix (`budget_dbm`, `sigma_sq_dbm`), but not both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use v2xmp_core::comm::ChannelParams;
use v2xmp_core::sim::{dbm_to_watts, ErrorModel, Mode, Policy, ScenarioConfig};
use v2xmp_core::solver::SolverConfig;
use v2xmp_core::vehicle::{ControlBounds, Weight2};

use crate::{Error, Result};

/// `[scenario]` keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lane_width: Option<f64>,
    /// `[x, y]` of EV, LV, TV, FV (m).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<[[f64; 2]; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speeds_kmh: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safe_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_track: Option<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_control: Option<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// `[channel]` keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_comp: Option<f64>,
}

/// `[solver]` keys; names match [`SolverConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bcd_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bcd_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier_t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pg_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pg_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub armijo_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub armijo_shrink: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub armijo_max_backtracks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub md_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bisection_tol: Option<f64>,
}

/// `[run]` keys: orchestration rather than physics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Policies evaluated on shared seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<Vec<String>>,
    /// `KEY=A:B:STEP` with `KEY` one of `beta`, `lv-speed`, `budget-dbm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
    /// Worker threads for Monte Carlo runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// The whole file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ConfigFile {
    /// Parses TOML text, reporting the offending key path and position on failure.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config { path: e.path().to_string(), message: e.inner().to_string() })
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    /// Fully populated file describing `run`, with powers in watts.
    pub fn describe(run: &RunConfig) -> Self {
        let s = &run.scenario;
        let c = &s.channel;
        let v = &run.solver;
        Self {
            scenario: ScenarioSection {
                lane_width: Some(s.lane_width),
                starts: Some(s.starts.map(|(x, y)| [x, y])),
                speeds_kmh: Some(s.speeds_kmh),
                accel: Some(s.accel),
                horizon: Some(s.horizon),
                steps: Some(s.steps),
                dt: Some(s.dt),
                budget: Some(s.budget),
                budget_dbm: None,
                safe_distance: Some(s.safe_distance),
                collision_distance: Some(s.collision_distance),
                rho: Some(s.rho.clone()),
                v_min: Some(s.bounds.v_min),
                v_max: Some(s.bounds.v_max),
                omega_min: Some(s.bounds.omega_min),
                omega_max: Some(s.bounds.omega_max),
                w_track: Some(s.w_track.matrix()),
                w_control: Some(s.w_control.matrix()),
                turn_start: Some(s.turn_start),
                turn_end: Some(s.turn_end),
                policy: Some(s.policy.name().to_owned()),
                mode: Some(s.mode.name().to_owned()),
                error_model: Some(s.error_model.name().to_owned()),
                trials: Some(s.trials),
                seed: Some(s.seed),
            },
            channel: ChannelSection {
                beta: Some(c.beta()),
                mu_sq: Some(c.mu_sq()),
                sigma_sq: Some(c.sigma_sq()),
                sigma_sq_dbm: None,
                rate: Some(c.rate()),
                tau0: Some(c.tau0()),
                t_comp: Some(c.t_comp()),
            },
            solver: SolverSection {
                bcd_max_iter: Some(v.bcd_max_iter),
                bcd_tol: Some(v.bcd_tol),
                barrier_t0: Some(v.barrier_t0),
                barrier_mu: Some(v.barrier_mu),
                barrier_eps: Some(v.barrier_eps),
                newton_tol: Some(v.newton_tol),
                newton_max_iter: Some(v.newton_max_iter),
                pg_max_iter: Some(v.pg_max_iter),
                pg_tol: Some(v.pg_tol),
                armijo_sigma: Some(v.armijo_sigma),
                armijo_shrink: Some(v.armijo_shrink),
                armijo_max_backtracks: Some(v.armijo_max_backtracks),
                md_floor: Some(v.md_floor),
                bisection_tol: Some(v.bisection_tol),
            },
            run: RunSection {
                compare: Some(run.compare.iter().map(|p| p.name().to_owned()).collect()),
                sweep: run.sweep.as_ref().map(Sweep::to_string),
                jobs: Some(run.jobs),
                out: Some(run.out.clone()),
            },
        }
    }
}

/// Sweepable scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    /// CSI feedback accuracy `β`.
    Beta,
    /// Initial LV speed (km/h).
    LvSpeed,
    /// Power budget (dBm).
    BudgetDbm,
}

impl SweepKey {
    /// Name used in `--sweep`.
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Beta => "beta",
            SweepKey::LvSpeed => "lv-speed",
            SweepKey::BudgetDbm => "budget-dbm",
        }
    }
}

/// Values of one parameter to run the experiment at.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Parameter being varied.
    pub key: SweepKey,
    /// First value.
    pub start: f64,
    /// Last value (inclusive, up to rounding).
    pub stop: f64,
    /// Increment.
    pub step: f64,
}

impl Sweep {
    /// Parses `KEY=A:B:STEP`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |message: &str| Error::Config { path: "run.sweep".into(), message: format!("{message} in `{text}`") };
        let (key, range) = text.split_once('=').ok_or_else(|| bad("expected KEY=A:B:STEP"))?;
        let key = [SweepKey::Beta, SweepKey::LvSpeed, SweepKey::BudgetDbm]
            .into_iter()
            .find(|k| k.name() == key.trim())
            .ok_or_else(|| bad("unknown sweep key (expected beta, lv-speed or budget-dbm)"))?;
        let parts: Vec<f64> = range
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric range"))?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected three numbers A:B:STEP"));
        };
        if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
            return Err(bad("need STEP > 0 and B >= A"));
        }
        Ok(Self { key, start, stop, step })
    }

    /// The swept values, `A, A + STEP, ...` up to `B`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12).collect()
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(&self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut s = base.clone();
        match self.key {
            SweepKey::Beta => s.channel = s.channel.with_beta(value)?,
            SweepKey::LvSpeed => s.speeds_kmh[1] = value,
            SweepKey::BudgetDbm => s.budget = dbm_to_watts(value),
        }
        s.validate()?;
        Ok(s)
    }
}

impl std::fmt::Display for Sweep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}:{}:{}", self.key.name(), self.start, self.stop, self.step)
    }
}

/// Resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    /// Policies to run on shared seeds; at least one.
    pub compare: Vec<Policy>,
    pub sweep: Option<Sweep>,
    pub jobs: usize,
    pub out: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_model: Option<String>,
}

impl Overrides {
    /// Writes every set flag into the matching file key.
    pub fn apply(&self, file: &mut ConfigFile) {
        fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        set(&mut file.scenario.seed, &self.seed);
        set(&mut file.scenario.trials, &self.trials);
        set(&mut file.scenario.policy, &self.policy);
        set(&mut file.scenario.mode, &self.mode);
        set(&mut file.scenario.error_model, &self.error_model);
        set(&mut file.run.compare, &self.compare);
        set(&mut file.run.sweep, &self.sweep);
        set(&mut file.run.jobs, &self.jobs);
        set(&mut file.run.out, &self.out);
    }
}

fn watts(path: &str, w: Option<f64>, dbm: Option<f64>) -> Result<Option<f64>> {
    match (w, dbm) {
        (Some(_), Some(_)) => Err(Error::Config { path: path.into(), message: "give the value in watts or in dBm, not both".into() }),
        (w, dbm) => Ok(w.or(dbm.map(dbm_to_watts))),
    }
}

fn named<T>(path: &str, value: &str, parse: fn(&str) -> Option<T>, expected: &str) -> Result<T> {
    parse(value).ok_or_else(|| Error::Config { path: path.into(), message: format!("unknown value `{value}` (expected {expected})") })
}

fn invalid(path: &str) -> impl Fn(v2xmp_core::Error) -> Error + '_ {
    move |e| Error::Config { path: path.into(), message: e.to_string() }
}

fn policy_names() -> String {
    Policy::ALL.map(Policy::name).join(", ")
}

impl RunConfig {
    /// Resolves a file (with overrides already applied) against the nominal defaults.
    pub fn resolve(file: &ConfigFile) -> Result<Self> {
        let mut s = ScenarioConfig::default();
        let sc = &file.scenario;
        macro_rules! take {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        take!(s.lane_width, sc.lane_width);
        if let Some(starts) = sc.starts {
            s.starts = starts.map(|[x, y]| (x, y));
        }
        take!(s.speeds_kmh, sc.speeds_kmh);
        take!(s.accel, sc.accel);
        take!(s.horizon, sc.horizon);
        take!(s.steps, sc.steps);
        take!(s.dt, sc.dt);
        if let Some(b) = watts("scenario.budget_dbm", sc.budget, sc.budget_dbm)? {
            s.budget = b;
        }
        take!(s.safe_distance, sc.safe_distance);
        take!(s.collision_distance, sc.collision_distance);
        take!(s.rho, sc.rho);
        s.bounds = ControlBounds::new(
            sc.v_min.unwrap_or(s.bounds.v_min),
            sc.v_max.unwrap_or(s.bounds.v_max),
            sc.omega_min.unwrap_or(s.bounds.omega_min),
            sc.omega_max.unwrap_or(s.bounds.omega_max),
        )
        .map_err(invalid("scenario.v_min"))?;
        if let Some(m) = sc.w_track {
            s.w_track = Weight2::new(m).map_err(invalid("scenario.w_track"))?;
        }
        if let Some(m) = sc.w_control {
            s.w_control = Weight2::new(m).map_err(invalid("scenario.w_control"))?;
        }
        take!(s.turn_start, sc.turn_start);
        take!(s.turn_end, sc.turn_end);
        if let Some(p) = &sc.policy {
            s.policy = named("scenario.policy", p, Policy::from_name, &policy_names())?;
        }
        if let Some(m) = &sc.mode {
            s.mode = named("scenario.mode", m, Mode::from_name, "oneshot, receding")?;
        }
        if let Some(m) = &sc.error_model {
            s.error_model = named("scenario.error_model", m, ErrorModel::from_name, "sampled, worst-case")?;
        }
        take!(s.trials, sc.trials);
        take!(s.seed, sc.seed);

        let ch = &file.channel;
        let c = s.channel;
        let sigma_sq = watts("channel.sigma_sq_dbm", ch.sigma_sq, ch.sigma_sq_dbm)?.unwrap_or(c.sigma_sq());
        s.channel = ChannelParams::new(
            ch.beta.unwrap_or(c.beta()),
            ch.mu_sq.unwrap_or(c.mu_sq()),
            sigma_sq,
            ch.rate.unwrap_or(c.rate()),
            ch.tau0.unwrap_or(c.tau0()),
            ch.t_comp.unwrap_or(c.t_comp()),
        )
        .map_err(invalid("channel"))?;
        s.validate().map_err(invalid("scenario"))?;

        let mut v = SolverConfig::default();
        let so = &file.solver;
        take!(v.bcd_max_iter, so.bcd_max_iter);
        take!(v.bcd_tol, so.bcd_tol);
        take!(v.barrier_t0, so.barrier_t0);
        take!(v.barrier_mu, so.barrier_mu);
        take!(v.barrier_eps, so.barrier_eps);
        take!(v.newton_tol, so.newton_tol);
        take!(v.newton_max_iter, so.newton_max_iter);
        take!(v.pg_max_iter, so.pg_max_iter);
        take!(v.pg_tol, so.pg_tol);
        take!(v.armijo_sigma, so.armijo_sigma);
        take!(v.armijo_shrink, so.armijo_shrink);
        take!(v.armijo_max_backtracks, so.armijo_max_backtracks);
        take!(v.md_floor, so.md_floor);
        take!(v.bisection_tol, so.bisection_tol);
        v.validate().map_err(invalid("solver"))?;

        let run = &file.run;
        let compare = match &run.compare {
            Some(names) if names.is_empty() => {
                return Err(Error::Config { path: "run.compare".into(), message: "list at least one policy".into() })
            }
            Some(names) => {
                names.iter().map(|n| named("run.compare", n.trim(), Policy::from_name, &policy_names())).collect::<Result<_>>()?
            }
            None => vec![s.policy],
        };
        let sweep = run.sweep.as_deref().map(Sweep::parse).transpose()?;
        let jobs = match run.jobs {
            Some(0) => return Err(Error::Config { path: "run.jobs".into(), message: "need at least one job".into() }),
            Some(j) => j,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let out = run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { scenario: s, solver: v, compare, sweep, jobs, out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_nominal_scenario() {
        let run = RunConfig::resolve(&ConfigFile::parse("").unwrap()).unwrap();
        assert_eq!(run.scenario, ScenarioConfig::default());
        assert_eq!(run.solver, SolverConfig::default());
        assert_eq!(run.compare, vec![Policy::Proposed]);
    }

    #[test]
    fn dbm_keys_convert_to_watts() {
        let file = ConfigFile::parse("[scenario]\nbudget_dbm = 20\n[channel]\nsigma_sq_dbm = -26\n").unwrap();
        let run = RunConfig::resolve(&file).unwrap();
        assert!((run.scenario.budget - 0.1).abs() < 1e-15);
        assert!((run.scenario.channel.sigma_sq() - ScenarioConfig::default().channel.sigma_sq()).abs() < 1e-18);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        match ConfigFile::parse("[channel]\nbeta = 0.3\ngamma = 1\n") {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "channel.gamma");
                assert!(message.contains("line 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn watts_and_dbm_together_are_rejected() {
        let file = ConfigFile::parse("[scenario]\nbudget = 1\nbudget_dbm = 30\n").unwrap();
        assert!(matches!(RunConfig::resolve(&file), Err(Error::Config { .. })));
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut file = ConfigFile::parse("[scenario]\nseed = 1\ntrials = 5\n").unwrap();
        Overrides { seed: Some(7), ..Overrides::default() }.apply(&mut file);
        let run = RunConfig::resolve(&file).unwrap();
        assert_eq!((run.scenario.seed, run.scenario.trials), (7, 5));
    }

    #[test]
    fn described_config_round_trips() {
        let file = ConfigFile::parse("[scenario]\nbudget_dbm = 25\nmode = \"oneshot\"\nsteps = 6\n[run]\nsweep = \"beta=0.1:0.9:0.4\"\n").unwrap();
        let run = RunConfig::resolve(&file).unwrap();
        let text = toml::to_string(&ConfigFile::describe(&run)).unwrap();
        assert_eq!(RunConfig::resolve(&ConfigFile::parse(&text).unwrap()).unwrap(), run);
    }

    #[test]
    fn sweep_ranges_include_the_end() {
        let s = Sweep::parse("beta=0.1:0.9:0.2").unwrap();
        assert_eq!(s.values().len(), 5);
        assert_eq!(s.values(), vec![0.1, 0.3, 0.5, 0.7, 0.9]);
        assert_eq!(Sweep::parse("lv-speed=5:30:5").unwrap().values().len(), 6);
        assert!(Sweep::parse("speed=1:2:1").is_err());
        assert!(Sweep::parse("beta=0.9:0.1:0.2").is_err());
    }
}
