//! Executes a validated scenario and collects its CSV tables.

use tbhost::bifurcation::{boundary_trace_2d, branch_scan, detect_folds, BifKind};
use tbhost::ensemble::{column, histogram, rank_diff, run_ensemble_with, summary_stats, EnsembleOptions, EnsembleSummary};
use tbhost::equilibrium::{all_equilibria, lambda1_contour, trivial_state, EquilibriumRecord};
use tbhost::ode::{classify_outcome, integrate, Outcome, OutcomeThresholds, Trajectory};
use tbhost::sde::PathResult;
use tbhost::{ModelParams, StateVec};

use crate::error::CliResult;
use crate::scenario::{Mode, Scenario};
use crate::table::{num, Table};

pub const VARS: [&str; 4] = ["M_u", "M_i", "B", "T"];
const ENV_VARS: [&str; 4] = ["delta", "b", "gamma", "eta"];
const HIST_BINS: usize = 50;

/// Window (days) of the early-time log-slope of B reported for ODE runs.
pub const SLOPE_WINDOW: (f64, f64) = (10.0, 30.0);

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    /// Non-fatal problems (failed scan points, failed paths).
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn state_cells(s: &StateVec) -> Vec<String> {
    s.to_array().iter().map(|&x| num(x)).collect()
}

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Clearance => "clearance",
        Outcome::Ltbi => "LTBI",
        Outcome::ActiveDisease => "active",
        Outcome::Undetermined => "undetermined",
    }
}

pub fn run_scenario(scenario: &Scenario) -> CliResult<RunOutput> {
    scenario.validate()?;
    let wanted = scenario.output_names();
    let mut out = match scenario.mode {
        Mode::Ode => run_ode(scenario)?,
        Mode::SdeDemographic | Mode::SdeEnvironmental => run_sde(scenario)?,
        Mode::Rankdiff => run_rankdiff(scenario)?,
        Mode::Equilibria => run_equilibria(scenario)?,
        Mode::Scan1d => run_scan1d(scenario)?,
        Mode::Scan2d => run_scan2d(scenario)?,
        Mode::Contour => run_contour(scenario)?,
    };
    out.tables.retain(|t| wanted.iter().any(|w| table_group(&t.name) == w));
    Ok(out)
}

/// Output group a table belongs to (`hist_B` -> `histograms`, ...).
fn table_group(name: &str) -> &str {
    if name.starts_with("hist_") {
        "histograms"
    } else if name.starts_with("sample_path_") {
        "sample_paths"
    } else if name == "path_counts" {
        "summary"
    } else {
        name
    }
}

fn log_slope(traj: &Trajectory, (t0, t1): (f64, f64)) -> Option<f64> {
    if traj.t_end() < t1 {
        return None;
    }
    let (b0, b1) = (traj.state_at(t0).bacteria, traj.state_at(t1).bacteria);
    (b0 > 0.0 && b1 > 0.0).then(|| (b1.ln() - b0.ln()) / (t1 - t0))
}

fn run_ode(sc: &Scenario) -> CliResult<RunOutput> {
    let ode = sc.ode.expect("validated");
    let runs: Vec<(String, StateVec, ModelParams)> = if sc.runs.is_empty() {
        vec![(sc.name.clone(), sc.init_state().expect("validated"), sc.model_params())]
    } else {
        (0..sc.runs.len())
            .map(|i| (sc.runs[i].label.clone(), sc.run_init(i).expect("validated"), sc.run_params(i)))
            .collect()
    };
    let mut traj_t = Table::new("trajectories", &["label", "t", "M_u", "M_i", "B", "T"]);
    let mut out_t = Table::new(
        "outcomes",
        &["label", "delta", "outcome", "M_u", "M_i", "B", "T", "b_log_slope"],
    );
    let th = OutcomeThresholds::default();
    for (label, init, p) in runs {
        let traj = integrate(init, &p, ode.t_end, ode.control())?;
        for (t, s) in traj.resample(ode.sample_dt) {
            let mut row = vec![label.clone(), num(t)];
            row.extend(state_cells(&s));
            traj_t.push(row);
        }
        let outcome = if traj.t_end() >= th.settle_window {
            classify_outcome(&traj, th)?.label
        } else {
            Outcome::Undetermined
        };
        let mut row = vec![label, num(p.delta), outcome_str(outcome).to_string()];
        row.extend(state_cells(&traj.last()));
        row.push(log_slope(&traj, SLOPE_WINDOW).map(num).unwrap_or_default());
        out_t.push(row);
    }
    Ok(RunOutput {
        tables: vec![traj_t, out_t],
        warnings: Vec::new(),
    })
}

fn ensemble(sc: &Scenario, extra_snapshots: &[f64]) -> CliResult<(EnsembleSummary, Vec<PathResult>)> {
    let sim = sc.sim.as_ref().expect("validated");
    let cfg = sc.sim_config().expect("validated");
    let mut snapshot_times = sim.snapshot_times.clone();
    for &t in extra_snapshots {
        if !snapshot_times.contains(&t) && t < cfg.t_end {
            snapshot_times.push(t);
        }
    }
    let opts = EnsembleOptions {
        snapshot_times,
        keep_paths: sim.sample_paths,
    };
    Ok(run_ensemble_with(sc.init_state().expect("validated"), &sc.model_params(), &cfg, sim.n_paths, &opts)?)
}

fn summary_rows(t: &mut Table, time: f64, states: &[StateVec]) -> CliResult<()> {
    for (k, var) in VARS.iter().enumerate() {
        let st = summary_stats(&column(states, k))?;
        t.push(vec![num(time), var.to_string(), num(st.mean), num(st.std), num(st.median)]);
    }
    Ok(())
}

fn summary_tables(s: &EnsembleSummary) -> CliResult<Vec<Table>> {
    let mut t = Table::new("summary", &["t", "variable", "mean", "std", "median"]);
    for (time, states) in &s.snapshots {
        summary_rows(&mut t, *time, states)?;
    }
    summary_rows(&mut t, s.config.t_end, &s.end_samples)?;
    let mut c = Table::new("path_counts", &["quantity", "count"]);
    for (name, v) in [
        ("paths", s.n_paths),
        ("failed", s.n_failed),
        ("absorbed", s.n_absorbed),
        ("b_zero", s.n_b_zero),
    ] {
        c.push(vec![name.to_string(), v.to_string()]);
    }
    Ok(vec![t, c])
}

fn failure_warning(s: &EnsembleSummary) -> Vec<String> {
    if s.n_failed > 0 {
        vec![format!("{} of {} paths hit a non-finite state and stopped", s.n_failed, s.n_paths)]
    } else {
        Vec::new()
    }
}

fn run_sde(sc: &Scenario) -> CliResult<RunOutput> {
    let (s, kept) = ensemble(sc, &[])?;
    let mut tables = Vec::new();

    let mut header = vec!["t".to_string()];
    header.extend(VARS.iter().map(|v| format!("mean_{v}")));
    header.extend(VARS.iter().map(|v| format!("std_{v}")));
    let mut ts = Table::new("timeseries", &header);
    for ((t, m), sd) in s.times.iter().zip(&s.mean_ts).zip(&s.std_ts) {
        let mut row = vec![num(*t)];
        row.extend(m.iter().map(|&x| num(x)));
        row.extend(sd.iter().map(|&x| num(x)));
        ts.push(row);
    }
    tables.push(ts);

    for (k, var) in VARS.iter().enumerate() {
        let h = histogram(&column(&s.end_samples, k), HIST_BINS)?;
        let mut t = Table::new(format!("hist_{var}"), &["bin_lo", "bin_hi", "count"]);
        for (i, &c) in h.counts.iter().enumerate() {
            t.push(vec![num(h.bin_edges[i]), num(h.bin_edges[i + 1]), c.to_string()]);
        }
        tables.push(t);
    }
    tables.extend(summary_tables(&s)?);

    for (i, path) in kept.iter().enumerate() {
        let mut header: Vec<&str> = vec!["t"];
        header.extend(VARS);
        if path.env_values.is_some() {
            header.extend(ENV_VARS);
        }
        let mut t = Table::new(format!("sample_path_{}", i + 1), &header);
        for (j, (time, st)) in path.times.iter().zip(&path.states).enumerate() {
            let mut row = vec![num(*time)];
            row.extend(state_cells(st));
            if let Some(env) = &path.env_values {
                row.extend(env[j].iter().map(|&x| num(x)));
            }
            t.push(row);
        }
        tables.push(t);
    }

    let cfg = s.config;
    let traj = integrate(
        sc.init_state().expect("validated"),
        &sc.model_params(),
        cfg.t_end,
        Default::default(),
    )?;
    let mut t = Table::new("ode_reference", &["t", "M_u", "M_i", "B", "T"]);
    for (time, st) in traj.resample(cfg.dt * cfg.record_stride as f64) {
        let mut row = vec![num(time)];
        row.extend(state_cells(&st));
        t.push(row);
    }
    tables.push(t);

    Ok(RunOutput {
        warnings: failure_warning(&s),
        tables,
    })
}

fn run_rankdiff(sc: &Scenario) -> CliResult<RunOutput> {
    let r = sc.rank.expect("validated");
    let (s, _) = ensemble(sc, &[r.t1, r.t2])?;
    let at = |t: f64| -> Vec<StateVec> {
        s.snapshots
            .iter()
            .find(|(x, _)| (x - t).abs() <= 1e-9 * t.max(1.0))
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| s.end_samples.clone())
    };
    let (first, second) = (at(r.t1), at(r.t2));
    let mut t = Table::new("rank_diff", &["rank", "B_first", "B_second", "diff"]);
    for row in rank_diff(&column(&first, 2), &column(&second, 2))? {
        t.push(vec![row.rank.to_string(), num(row.first), num(row.second), num(row.diff)]);
    }
    let mut tables = vec![t];
    tables.extend(summary_tables(&s)?);
    Ok(RunOutput {
        warnings: failure_warning(&s),
        tables,
    })
}

fn equilibrium_row(lead: Vec<String>, e: &EquilibriumRecord) -> Vec<String> {
    let mut row = lead;
    row.push(e.branch_tag.as_str().to_string());
    row.extend(state_cells(&e.state));
    row.push(e.stability.as_str().to_string());
    row.push(num(e.max_real_part()));
    row
}

fn run_equilibria(sc: &Scenario) -> CliResult<RunOutput> {
    let mut t = Table::new(
        "equilibria",
        &["label", "branch_tag", "M_u", "M_i", "B", "T", "stability", "max_re_eigenvalue"],
    );
    for (i, run) in sc.runs.iter().enumerate() {
        for e in all_equilibria(&sc.run_params(i))? {
            t.push(equilibrium_row(vec![run.label.clone()], &e));
        }
    }
    Ok(RunOutput {
        tables: vec![t],
        warnings: Vec::new(),
    })
}

fn run_scan1d(sc: &Scenario) -> CliResult<RunOutput> {
    let scan = sc.scan.as_ref().expect("validated");
    let base = sc.model_params();
    let name = scan.parameter;
    let diag = branch_scan(&base, name, (scan.range[0], scan.range[1]), scan.points)?;
    let pname = name.as_str();
    let mut bd = Table::new(
        "branch_diagram",
        &[pname, "branch_tag", "M_u", "M_i", "B", "T", "stability", "max_re_eigenvalue"],
    );
    for (v, eqs) in diag.values.iter().zip(&diag.equilibria) {
        for e in eqs {
            bd.push(equilibrium_row(vec![num(*v)], e));
        }
    }
    let mut bif = Table::new("bifurcations", &["kind", pname, "M_u", "M_i", "B", "T"]);
    let mut points = detect_folds(&diag)?;
    points.extend(diag.branch_points.iter().map(|&v| tbhost::bifurcation::BifPoint {
        kind: BifKind::BranchPoint,
        parameter_value: v,
        second_value: None,
        state: trivial_state(&base.with(name, v)),
    }));
    points.sort_by(|a, b| a.parameter_value.total_cmp(&b.parameter_value));
    for p in points {
        let kind = match p.kind {
            BifKind::Fold => "LP",
            BifKind::BranchPoint => "BP",
        };
        let mut row = vec![kind.to_string(), num(p.parameter_value)];
        row.extend(state_cells(&p.state));
        bif.push(row);
    }
    Ok(RunOutput {
        tables: vec![bd, bif],
        warnings: diag.failures.iter().map(|(v, e)| format!("{pname} = {v}: {e}")).collect(),
    })
}

fn run_scan2d(sc: &Scenario) -> CliResult<RunOutput> {
    let scan = sc.scan.as_ref().expect("validated");
    let second = scan.second.expect("validated");
    let r = scan.second_range.expect("validated");
    let trace = boundary_trace_2d(&sc.model_params(), second, (r[0], r[1]), scan.slices.expect("validated"))?;
    let sname = second.as_str();
    let mut lp = Table::new("lp_curves", &["curve", "delta", sname]);
    for (i, curve) in trace.lp_curves.iter().enumerate() {
        for &(d, v) in curve {
            lp.push(vec![i.to_string(), num(d), num(v)]);
        }
    }
    let mut bp = Table::new("bp_curve", &["delta", sname]);
    for &(d, v) in &trace.bp_curve {
        bp.push(vec![num(d), num(v)]);
    }
    let mut sf = Table::new("slice_folds", &[sname, "fold", "delta"]);
    for (v, folds) in &trace.slice_folds {
        for (i, &d) in folds.iter().enumerate() {
            sf.push(vec![num(*v), i.to_string(), num(d)]);
        }
    }
    Ok(RunOutput {
        tables: vec![lp, bp, sf],
        warnings: trace.failures.iter().map(|(v, e)| format!("{sname} = {v}: {e}")).collect(),
    })
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { r[1] } else { r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn run_contour(sc: &Scenario) -> CliResult<RunOutput> {
    let c = sc.contour.expect("validated");
    let bs = linspace(c.b_range, c.b_points);
    let gs = linspace(c.gamma_range, c.gamma_points);
    let grid = lambda1_contour(&sc.model_params(), &bs, &gs)?;
    let mut t = Table::new("lambda1_contour", &["b", "gamma", "lambda1"]);
    for (b, row) in bs.iter().zip(&grid) {
        for (g, l) in gs.iter().zip(row) {
            t.push(vec![num(*b), num(*g), num(*l)]);
        }
    }
    Ok(RunOutput {
        tables: vec![t],
        warnings: Vec::new(),
    })
}
