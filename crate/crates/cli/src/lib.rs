//! Scenario files, presets and CSV export for the `tbhost` engine.

pub mod error;
pub mod presets;
pub mod run;
pub mod scenario;
pub mod table;

pub use error::{CliError, CliResult};
pub use presets::{list_presets, preset};
pub use run::{run_scenario, RunOutput};
pub use scenario::{parse_config, serialize, Mode, Scenario};
pub use table::Table;

/// Command-line adjustments of a preset's stochastic settings. Changing `dt`
/// keeps the recording interval.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimOverrides {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

pub fn apply_overrides(scenario: &mut Scenario, o: SimOverrides) -> CliResult<()> {
    if o.paths.is_none() && o.dt.is_none() && o.seed.is_none() {
        return Ok(());
    }
    let Some(sim) = scenario.sim.as_mut() else {
        return Err(CliError::Config {
            path: "sim".into(),
            message: format!("--paths, --dt and --seed need a stochastic scenario, not `{}`", scenario.mode.as_str()),
        });
    };
    if let Some(n) = o.paths {
        sim.n_paths = n;
        sim.sample_paths = sim.sample_paths.min(n);
    }
    if let Some(dt) = o.dt {
        let interval = sim.dt * sim.record_stride as f64;
        sim.record_stride = ((interval / dt).round() as usize).max(1);
        sim.dt = dt;
    }
    if let Some(seed) = o.seed {
        sim.seed = seed;
    }
    scenario.validate()
}
