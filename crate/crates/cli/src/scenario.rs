//! Scenario documents (JSON, `"schema": 1`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tbhost::ode::StepControl;
use tbhost::sde::{EnvProcessParams, SimConfig};
use tbhost::{ModelParams, ParamName, StateVec};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ode,
    SdeDemographic,
    SdeEnvironmental,
    Equilibria,
    Scan1d,
    Scan2d,
    Contour,
    Rankdiff,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ode => "ode",
            Mode::SdeDemographic => "sde-demographic",
            Mode::SdeEnvironmental => "sde-environmental",
            Mode::Equilibria => "equilibria",
            Mode::Scan1d => "scan1d",
            Mode::Scan2d => "scan2d",
            Mode::Contour => "contour",
            Mode::Rankdiff => "rankdiff",
        }
    }

    /// Tables written when `outputs` is empty.
    pub fn default_outputs(self) -> &'static [&'static str] {
        match self {
            Mode::Ode => &["trajectories", "outcomes"],
            Mode::SdeDemographic | Mode::SdeEnvironmental => {
                &["timeseries", "histograms", "summary", "sample_paths", "ode_reference"]
            }
            Mode::Equilibria => &["equilibria"],
            Mode::Scan1d => &["branch_diagram", "bifurcations"],
            Mode::Scan2d => &["lp_curves", "bp_curve", "slice_folds"],
            Mode::Contour => &["lambda1_contour"],
            Mode::Rankdiff => &["rank_diff", "summary"],
        }
    }
}

/// Initial condition, keyed by variable name.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitState {
    #[serde(rename = "M_u")]
    pub m_u: f64,
    #[serde(rename = "M_i")]
    pub m_i: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl From<InitState> for StateVec {
    fn from(s: InitState) -> Self {
        StateVec::new(s.m_u, s.m_i, s.b, s.t)
    }
}

impl From<StateVec> for InitState {
    fn from(s: StateVec) -> Self {
        Self {
            m_u: s.uninfected,
            m_i: s.infected,
            b: s.bacteria,
            t: s.t_cells,
        }
    }
}

pub type Overrides = BTreeMap<ParamName, f64>;

/// One deterministic run (or one equilibrium evaluation) within a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitState>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Overrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSection {
    pub t_end: f64,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    /// Spacing of the exported samples (days).
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
}

fn default_tol() -> f64 {
    StepControl::default().rel_tol
}

fn default_max_step() -> f64 {
    StepControl::default().max_step
}

fn default_sample_dt() -> f64 {
    1.0
}

impl OdeSection {
    pub fn control(&self) -> StepControl {
        StepControl {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub seed: u64,
    pub n_paths: usize,
    /// Full paths exported for plotting.
    #[serde(default)]
    pub sample_paths: usize,
    /// Extra times at which per-path states are summarised.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
}

/// Mean-reverting parameter processes: either the same return rate and
/// volatility on every channel (targets and starts from the parameters), or
/// fully specified channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<EnvProcessParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub parameter: ParamName,
    pub range: [f64; 2],
    #[serde(default = "default_scan_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<ParamName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
}

fn default_scan_points() -> usize {
    400
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSection {
    pub b_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub b_points: usize,
    pub gamma_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub t1: f64,
    pub t2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub mode: Mode,
    /// Overrides of the baseline parameter values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Overrides,
    /// Reject therapy-targeted parameters outside their admissible ranges.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub range_check: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitState>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<ContourSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
}

fn config_err(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: msg.into(),
    }
}

fn apply(base: ModelParams, overrides: &Overrides) -> ModelParams {
    overrides.iter().fold(base, |p, (&name, &v)| p.with(name, v))
}

fn check_overrides(path: &str, overrides: &Overrides, range_check: bool) -> CliResult<()> {
    for (&name, &v) in overrides {
        let key = format!("{path}.{name}");
        if !v.is_finite() || v < 0.0 {
            return Err(config_err(&key, format!("{name} must be a nonnegative number, got {v}")));
        }
        if range_check {
            if let Some((lo, hi)) = name.scan_bounds() {
                if v < lo || v > hi {
                    return Err(config_err(&key, format!("{name} = {v} outside [{lo}, {hi}]")));
                }
            }
        }
    }
    Ok(())
}

fn check_state(path: &str, s: &InitState) -> CliResult<()> {
    StateVec::from(*s)
        .validate()
        .map_err(|e| config_err(path, e.to_string()))
}

fn require<'a, T>(field: &'a Option<T>, name: &str, mode: Mode) -> CliResult<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| config_err(name, format!("required for mode `{}`", mode.as_str())))
}

fn check_range(path: &str, r: [f64; 2]) -> CliResult<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
        return Err(config_err(path, format!("expected an increasing pair, got {r:?}")));
    }
    Ok(())
}

fn check_scan_range(path: &str, name: ParamName, r: [f64; 2]) -> CliResult<()> {
    check_range(path, r)?;
    if let Some((lo, hi)) = name.scan_bounds() {
        if r[0] < lo || r[1] > hi {
            return Err(config_err(path, format!("{name} range {r:?} exceeds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl Scenario {
    /// Baseline parameters with the scenario-level overrides applied.
    pub fn model_params(&self) -> ModelParams {
        apply(ModelParams::default(), &self.params)
    }

    /// Parameters of run `i` (scenario overrides, then run overrides).
    pub fn run_params(&self, i: usize) -> ModelParams {
        apply(self.model_params(), &self.runs[i].params)
    }

    pub fn run_init(&self, i: usize) -> Option<StateVec> {
        self.runs[i].init.or(self.init).map(StateVec::from)
    }

    pub fn init_state(&self) -> Option<StateVec> {
        self.init.map(StateVec::from)
    }

    pub fn env_params(&self) -> Option<EnvProcessParams> {
        let env = self.env?;
        if let Some(ch) = env.channels {
            return Some(ch);
        }
        Some(EnvProcessParams::uniform(&self.model_params(), env.alpha?, env.sigma?))
    }

    /// Simulation settings as the stochastic engine expects them.
    pub fn sim_config(&self) -> Option<SimConfig> {
        let s = self.sim.as_ref()?;
        Some(match self.mode {
            Mode::SdeEnvironmental => SimConfig::environmental(s.dt, s.t_end, s.record_stride, s.seed, self.env_params()?),
            _ => SimConfig::demographic(s.dt, s.t_end, s.record_stride, s.seed),
        })
    }

    /// Requested tables, defaulting to everything the mode produces.
    pub fn output_names(&self) -> Vec<String> {
        if self.outputs.is_empty() {
            self.mode.default_outputs().iter().map(|s| s.to_string()).collect()
        } else {
            self.outputs.clone()
        }
    }

    /// Schema-level and mode-level checks; key paths appear in messages.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_err(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(config_err("name", "must not be empty"));
        }
        check_overrides("params", &self.params, self.range_check)?;
        self.model_params()
            .validate_allow_zero_delta()
            .map_err(|e| config_err("params", e.to_string()))?;
        if let Some(s) = &self.init {
            check_state("init", s)?;
        }
        for (i, r) in self.runs.iter().enumerate() {
            check_overrides(&format!("runs[{i}].params"), &r.params, self.range_check)?;
            if let Some(s) = &r.init {
                check_state(&format!("runs[{i}].init"), s)?;
            }
            self.run_params(i)
                .validate_allow_zero_delta()
                .map_err(|e| config_err(&format!("runs[{i}].params"), e.to_string()))?;
        }
        let allowed = self.mode.default_outputs();
        for (i, o) in self.outputs.iter().enumerate() {
            if !allowed.contains(&o.as_str()) {
                return Err(config_err(
                    &format!("outputs[{i}]"),
                    format!("`{o}` is not produced by mode `{}`; expected one of {allowed:?}", self.mode.as_str()),
                ));
            }
        }
        match self.mode {
            Mode::Ode => {
                let ode = require(&self.ode, "ode", self.mode)?;
                if !(ode.t_end > 0.0 && ode.rel_tol > 0.0 && ode.abs_tol > 0.0 && ode.max_step > 0.0 && ode.sample_dt > 0.0) {
                    return Err(config_err("ode", "t_end, tolerances, max_step and sample_dt must be positive"));
                }
                if self.runs.is_empty() && self.init.is_none() {
                    return Err(config_err("runs", "ode mode needs `runs` or a top-level `init`"));
                }
                for i in 0..self.runs.len() {
                    if self.run_init(i).is_none() {
                        return Err(config_err(&format!("runs[{i}].init"), "missing and no top-level `init`"));
                    }
                }
            }
            Mode::SdeDemographic | Mode::SdeEnvironmental | Mode::Rankdiff => {
                require(&self.init, "init", self.mode)?;
                let sim = require(&self.sim, "sim", self.mode)?;
                if sim.n_paths < 2 {
                    return Err(config_err("sim.n_paths", "need at least 2 paths"));
                }
                if self.mode == Mode::SdeEnvironmental {
                    let env = require(&self.env, "env", self.mode)?;
                    match (env.alpha, env.sigma, env.channels) {
                        (Some(_), Some(_), None) | (None, None, Some(_)) => {}
                        _ => return Err(config_err("env", "give either `alpha` and `sigma`, or `channels`")),
                    }
                } else if self.env.is_some() {
                    return Err(config_err("env", format!("not used by mode `{}`", self.mode.as_str())));
                }
                let cfg = self.sim_config().expect("checked above");
                cfg.validate().map_err(|e| config_err("sim", e.to_string()))?;
                let recorded = cfg.record_times();
                for (i, &t) in sim.snapshot_times.iter().enumerate() {
                    if !recorded.iter().any(|&r| (r - t).abs() <= 1e-9 * t.abs().max(1.0)) {
                        return Err(config_err(
                            &format!("sim.snapshot_times[{i}]"),
                            format!("{t} is not a recorded time (dt * record_stride grid)"),
                        ));
                    }
                }
                if self.mode == Mode::Rankdiff {
                    let r = require(&self.rank, "rank", self.mode)?;
                    for (key, t) in [("rank.t1", r.t1), ("rank.t2", r.t2)] {
                        if !recorded.iter().any(|&x| (x - t).abs() <= 1e-9 * t.abs().max(1.0)) {
                            return Err(config_err(key, format!("{t} is not a recorded time")));
                        }
                    }
                }
            }
            Mode::Equilibria => {
                if self.runs.is_empty() {
                    return Err(config_err("runs", "equilibria mode needs at least one run"));
                }
            }
            Mode::Scan1d | Mode::Scan2d => {
                let scan = require(&self.scan, "scan", self.mode)?;
                check_scan_range("scan.range", scan.parameter, scan.range)?;
                if self.mode == Mode::Scan1d {
                    if scan.points < 200 {
                        return Err(config_err("scan.points", "need at least 200 points"));
                    }
                } else {
                    if scan.parameter != ParamName::Delta {
                        return Err(config_err("scan.parameter", "two-parameter traces run along delta"));
                    }
                    let second = scan.second.ok_or_else(|| config_err("scan.second", "required for mode `scan2d`"))?;
                    if !matches!(second, ParamName::B | ParamName::Gamma | ParamName::Eta) {
                        return Err(config_err("scan.second", format!("expected b, gamma or eta, got {second}")));
                    }
                    let r = scan
                        .second_range
                        .ok_or_else(|| config_err("scan.second_range", "required for mode `scan2d`"))?;
                    check_scan_range("scan.second_range", second, r)?;
                    if scan.slices.unwrap_or(0) < 2 {
                        return Err(config_err("scan.slices", "need at least 2 slices"));
                    }
                }
            }
            Mode::Contour => {
                let c = require(&self.contour, "contour", self.mode)?;
                check_scan_range("contour.b_range", ParamName::B, c.b_range)?;
                check_scan_range("contour.gamma_range", ParamName::Gamma, c.gamma_range)?;
                if c.b_points < 2 || c.gamma_points < 2 {
                    return Err(config_err("contour", "need at least 2 points per axis"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> CliResult<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(&path, e.into_inner().to_string())
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn serialize(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenarios always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(r#"{{"schema": 1, "name": "t", "mode": "equilibria", "runs": [{{"label": "a"}}]{extra}}}"#)
    }

    #[test]
    fn empty_overrides_give_baseline() {
        let s = parse_config(&minimal("")).unwrap();
        assert_eq!(s.model_params(), ModelParams::default());
    }

    #[test]
    fn single_override() {
        let s = parse_config(&minimal(r#", "params": {"delta": 0.27}"#)).unwrap();
        assert_eq!(s.model_params(), ModelParams::default().with_delta(0.27));
    }

    #[test]
    fn negative_value_names_the_key() {
        let e = parse_config(&minimal(r#", "params": {"delta": -1}"#)).unwrap_err();
        assert!(e.to_string().contains("delta"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let e = parse_config(&minimal(r#", "sim": {"dt": 0.1, "bogus": 1}"#)).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("sim") && msg.contains("bogus"), "{msg}");
        let e = parse_config(&minimal(r#", "params": {"zeta": 1}"#)).unwrap_err();
        assert!(e.to_string().contains("zeta"), "{e}");
    }

    #[test]
    fn range_check_is_opt_in() {
        assert!(parse_config(&minimal(r#", "params": {"b": 0.9}"#)).is_ok());
        let e = parse_config(&minimal(r#", "params": {"b": 0.9}, "range_check": true"#)).unwrap_err();
        assert!(e.to_string().contains("params.b"), "{e}");
    }

    #[test]
    fn mode_required_fields() {
        let text = r#"{"schema": 1, "name": "t", "mode": "sde-demographic", "init": {"M_u": 1, "M_i": 1, "B": 1, "T": 1}}"#;
        let e = parse_config(text).unwrap_err();
        assert!(e.to_string().contains("sim"), "{e}");
        let e = parse_config(r#"{"schema": 2, "name": "t", "mode": "ode"}"#).unwrap_err();
        assert!(e.to_string().contains("schema"), "{e}");
    }
}
