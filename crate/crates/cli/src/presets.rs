//! Built-in scenarios.

use tbhost::equilibrium::delta_threshold;
use tbhost::{ModelParams, ParamName};

use crate::error::{CliError, CliResult};
use crate::scenario::{
    ContourSection, EnvSection, InitState, Mode, OdeSection, Overrides, RankSection, RunSpec, ScanSection, Scenario,
    SimSection, SCHEMA_VERSION,
};

/// Macrophage killing rate used by every preset; the baseline table value is
/// ten times larger.
pub const PRESET_ETA: f64 = ModelParams::REFERENCE_ETA;

const LOW_INOCULUM: [f64; 4] = [4.99e5, 1.0, 10.0, 1000.0];
const ACTIVE_START: [f64; 4] = [2e4, 1e3, 1e5, 1e3];
const LATENT_START: [f64; 4] = [4.99e5, 4.0, 4.0, 75.0];
const HEALTHY_EXPOSED: [f64; 4] = [5e5, 1.0, 10.0, 1000.0];

const FIG7_PANELS: [(&str, [(&str, [(ParamName, f64); 2]); 2]); 3] = [
    (
        "b",
        [
            ("region2", [(ParamName::B, 0.1), (ParamName::Delta, 0.2)]),
            ("region3", [(ParamName::B, 0.17), (ParamName::Delta, 0.2)]),
        ],
    ),
    (
        "gamma",
        [
            ("region2", [(ParamName::Gamma, 1.5), (ParamName::Delta, 0.2)]),
            ("region3", [(ParamName::Gamma, 1.05), (ParamName::Delta, 0.2)]),
        ],
    ),
    (
        "eta",
        [
            ("region2", [(ParamName::Eta, 5e-8), (ParamName::Delta, 0.1)]),
            ("region3", [(ParamName::Eta, 5e-8), (ParamName::Delta, 0.285)]),
        ],
    ),
];

const FIG7_RATES: [(&str, f64); 2] = [("fast", 0.5), ("slow", 0.05)];

fn init(s: [f64; 4]) -> InitState {
    InitState {
        m_u: s[0],
        m_i: s[1],
        b: s[2],
        t: s[3],
    }
}

fn overrides(pairs: &[(ParamName, f64)]) -> Overrides {
    let mut o: Overrides = pairs.iter().copied().collect();
    o.entry(ParamName::Eta).or_insert(PRESET_ETA);
    o
}

fn base(name: &str, mode: Mode, params: &[(ParamName, f64)]) -> Scenario {
    Scenario {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        mode,
        params: overrides(params),
        range_check: false,
        init: None,
        runs: Vec::new(),
        ode: None,
        sim: None,
        env: None,
        scan: None,
        contour: None,
        rank: None,
        outputs: Vec::new(),
    }
}

fn run(label: &str, start: Option<[f64; 4]>, params: &[(ParamName, f64)]) -> RunSpec {
    RunSpec {
        label: label.to_string(),
        init: start.map(init),
        params: params.iter().copied().collect(),
    }
}

fn ode(t_end: f64) -> Option<OdeSection> {
    Some(OdeSection {
        t_end,
        rel_tol: 1e-8,
        abs_tol: 1e-8,
        max_step: 1.0,
        sample_dt: if t_end > 500.0 { 1.0 } else { 0.1 },
    })
}

/// dt = 0.01 with one record per day.
fn sim(t_end: f64, seed: u64, n_paths: usize, sample_paths: usize) -> Option<SimSection> {
    Some(SimSection {
        dt: 0.01,
        t_end,
        record_stride: 100,
        seed,
        n_paths,
        sample_paths,
        snapshot_times: Vec::new(),
    })
}

fn sde(name: &str, delta: f64, start: [f64; 4], t_end: f64, seed: u64) -> Scenario {
    Scenario {
        init: Some(init(start)),
        sim: sim(t_end, seed, 10_000, 4),
        ..base(name, Mode::SdeDemographic, &[(ParamName::Delta, delta)])
    }
}

fn fig7(panel: &str, region: &str, rate: &str) -> Option<Scenario> {
    let (_, regions) = FIG7_PANELS.iter().find(|(p, _)| *p == panel)?;
    let (_, params) = regions.iter().find(|(r, _)| *r == region)?;
    let &(_, alpha) = FIG7_RATES.iter().find(|(r, _)| *r == rate)?;
    let pi = FIG7_PANELS.iter().position(|(p, _)| *p == panel)? as u64;
    let ri = regions.iter().position(|(r, _)| *r == region)? as u64;
    let seed = 7000 + 10 * pi + ri;
    Some(Scenario {
        init: Some(init(LOW_INOCULUM)),
        sim: sim(1000.0, seed, 200, 4),
        env: Some(EnvSection {
            alpha: Some(alpha),
            sigma: Some((alpha / 2.0).sqrt()),
            channels: None,
        }),
        ..base(&format!("fig7-{panel}-{region}-{rate}"), Mode::SdeEnvironmental, params)
    })
}

fn scan2d(name: &str, second: ParamName) -> Scenario {
    let (lo, hi) = second.scan_bounds().expect("therapy parameter");
    Scenario {
        scan: Some(ScanSection {
            parameter: ParamName::Delta,
            range: [0.0, 0.35],
            points: 200,
            second: Some(second),
            second_range: Some([lo, hi]),
            slices: Some(41),
        }),
        ..base(name, Mode::Scan2d, &[])
    }
}

fn contour(name: &str, n: [f64; 3]) -> Scenario {
    Scenario {
        contour: Some(ContourSection {
            b_range: [0.05, 0.5],
            gamma_range: [0.1, 2.0],
            b_points: 46,
            gamma_points: 39,
        }),
        ..base(
            name,
            Mode::Contour,
            &[(ParamName::N1, n[0]), (ParamName::N2, n[1]), (ParamName::N3, n[2])],
        )
    }
}

fn trajectories(name: &str, start: [f64; 4], t_end: f64, runs: Vec<RunSpec>) -> Scenario {
    Scenario {
        init: Some(init(start)),
        runs,
        ode: ode(t_end),
        ..base(name, Mode::Ode, &[])
    }
}

fn delta_label(d: f64) -> String {
    format!("delta{d:.4}")
}

fn fig8(name: &str, deltas: &[f64]) -> Scenario {
    let runs = deltas
        .iter()
        .map(|&d| run(&delta_label(d), None, &[(ParamName::Delta, d)]))
        .collect();
    trajectories(name, HEALTHY_EXPOSED, 100.0, runs)
}

/// Names of every preset with a one-line description.
pub fn list_presets() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = [
        ("fig1a", "equilibria of the ODE model against delta over [0, 0.35]"),
        ("fig1bc", "ODE trajectories from the low- and high-inoculum starts"),
        ("fig2", "demographic noise, clearance side of Region 2 (delta = 0.2)"),
        ("fig3", "demographic noise, active side of Region 2 (delta = 0.2)"),
        ("fig4", "demographic noise, latent infection in Region 3 (delta = 0.27)"),
        ("fig5", "demographic noise in Region 4 (delta = 0.35) to t = 1300"),
        ("fig-order", "rank-ordered B differences between days 1246 and 1327 in Region 4"),
        ("fig6a", "fold and branch-point curves in the (delta, b) plane"),
        ("fig6b", "fold and branch-point curves in the (delta, gamma) plane"),
        ("fig6c", "fold and branch-point curves in the (delta, eta) plane"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    for (panel, regions) in FIG7_PANELS {
        for (region, params) in regions {
            for (rate, alpha) in FIG7_RATES {
                let what = params
                    .iter()
                    .map(|(n, x)| format!("{n} = {x}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                v.push((
                    format!("fig7-{panel}-{region}-{rate}"),
                    format!("therapy noise with alpha = {alpha}, {what}"),
                ));
            }
        }
    }
    for (a, b) in [
        ("fig8a", "early ODE dynamics for delta below and at the threshold"),
        ("fig8b", "early ODE dynamics for delta at and above the threshold"),
        ("fig-eta-a", "killing-rate boost against no boost at delta = 0.25"),
        ("fig-eta-b", "killing-rate boost alone against boost plus lower delta"),
        ("fig-lam1-a", "dominant eigenvalue over (b, gamma) with N1 = 50, N2 = 30, N3 = 25"),
        ("fig-lam1-b", "dominant eigenvalue over (b, gamma) with N1 = 10, N2 = 20, N3 = 25"),
    ] {
        v.push((a.to_string(), b.to_string()));
    }
    v
}

pub fn preset(name: &str) -> CliResult<Scenario> {
    let d = ParamName::Delta;
    let sc = match name {
        "fig1a" => Scenario {
            scan: Some(ScanSection {
                parameter: d,
                range: [0.0, 0.35],
                points: 400,
                second: None,
                second_range: None,
                slices: None,
            }),
            ..base(name, Mode::Scan1d, &[])
        },
        "fig1bc" => {
            let runs = vec![
                run("low-delta0.20", Some([1e6, 1.0, 1.0, 40.0]), &[(d, 0.2)]),
                run("low-delta0.27", Some([6e5, 1.0, 8.0, 90.0]), &[(d, 0.27)]),
                run("low-delta0.35", Some([1e6, 1.0, 1.0, 40.0]), &[(d, 0.35)]),
                run("low-delta0.05", Some([1e6, 1.0, 15.0, 40.0]), &[(d, 0.05)]),
                run("high-delta0.20", Some([3e6, 2e3, 2.5e4, 3.7e6]), &[(d, 0.2)]),
                run("high-delta0.27-a", Some([4.5e6, 270.0, 4.2e3, 7e6]), &[(d, 0.27)]),
                run("high-delta0.27-b", Some([4.5e6, 270.0, 4.8e3, 7e6]), &[(d, 0.27)]),
            ];
            Scenario {
                runs,
                ode: ode(2000.0),
                ..base(name, Mode::Ode, &[])
            }
        }
        "fig2" => sde(name, 0.2, LOW_INOCULUM, 300.0, 2002),
        "fig3" => sde(name, 0.2, ACTIVE_START, 100.0, 3003),
        "fig4" => {
            let mut sc = sde(name, 0.27, LATENT_START, 300.0, 4004);
            sc.sim.as_mut().expect("set").snapshot_times = vec![100.0];
            sc
        }
        "fig5" => sde(name, 0.35, LATENT_START, 1300.0, 5005),
        "fig-order" => Scenario {
            mode: Mode::Rankdiff,
            rank: Some(RankSection {
                t1: 1246.0,
                t2: 1327.0,
            }),
            ..sde(name, 0.35, LATENT_START, 1327.0, 5006)
        },
        "fig6a" => scan2d(name, ParamName::B),
        "fig6b" => scan2d(name, ParamName::Gamma),
        "fig6c" => scan2d(name, ParamName::Eta),
        "fig8a" => {
            let d0 = delta_threshold(&ModelParams::reference());
            fig8(name, &[0.25, 0.28, d0])
        }
        "fig8b" => {
            let d0 = delta_threshold(&ModelParams::reference());
            fig8(name, &[d0, 0.31, 0.34])
        }
        "fig-eta-a" => trajectories(
            name,
            HEALTHY_EXPOSED,
            100.0,
            vec![
                run("no-boost", None, &[(d, 0.25), (ParamName::Eta, 1.25e-9)]),
                run("boost", None, &[(d, 0.25), (ParamName::Eta, 1.25e-8)]),
            ],
        ),
        "fig-eta-b" => trajectories(
            name,
            HEALTHY_EXPOSED,
            100.0,
            vec![
                run("boost", None, &[(d, 0.25), (ParamName::Eta, 1.25e-8)]),
                run("boost-and-antibiotic", None, &[(d, 0.15), (ParamName::Eta, 1.25e-8)]),
            ],
        ),
        "fig-lam1-a" => contour(name, [50.0, 30.0, 25.0]),
        "fig-lam1-b" => contour(name, [10.0, 20.0, 25.0]),
        other => {
            let parsed = other
                .strip_prefix("fig7-")
                .map(|rest| rest.split('-').collect::<Vec<_>>())
                .and_then(|p| if p.len() == 3 { fig7(p[0], p[1], p[2]) } else { None });
            match parsed {
                Some(sc) => sc,
                None => {
                    let names: Vec<String> = list_presets().into_iter().map(|(n, _)| n).collect();
                    return Err(CliError::Config {
                        path: "preset".into(),
                        message: format!("unknown preset `{other}`; available: {}", names.join(", ")),
                    });
                }
            }
        }
    };
    Ok(sc)
}
