use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tbhost_cli::table::write_all;
use tbhost_cli::{apply_overrides, list_presets, parse_config, preset, run_scenario, serialize, CliError, CliResult, Scenario, SimOverrides};

const OUT_DIR_VAR: &str = "TBHOST_OUT_DIR";
const THREADS_VAR: &str = "TBHOST_THREADS";

#[derive(Parser)]
#[command(name = "tbhost", version, about = "Deterministic and stochastic in-host TB model runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in preset
    Preset {
        name: String,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the scenario JSON instead of running it
        #[arg(long)]
        dump: bool,
    },
    /// List the built-in presets
    ListPresets,
    /// Check a scenario file without running it
    Validate { config: PathBuf },
}

fn load(path: &Path) -> CliResult<Scenario> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn out_dir(flag: Option<PathBuf>, name: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn execute(sc: &Scenario, out: Option<PathBuf>) -> CliResult<()> {
    let output = run_scenario(sc)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    for path in write_all(&output.tables, &out_dir(out, &sc.name))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| CliError::Config {
        path: THREADS_VAR.into(),
        message: format!("expected a positive integer, got `{v}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config {
            path: THREADS_VAR.into(),
            message: e.to_string(),
        })
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, out } => execute(&load(&config)?, out),
        Command::Preset {
            name,
            paths,
            dt,
            seed,
            out,
            dump,
        } => {
            let mut sc = preset(&name)?;
            apply_overrides(&mut sc, SimOverrides { paths, dt, seed })?;
            if dump {
                println!("{}", serialize(&sc));
                Ok(())
            } else {
                execute(&sc, out)
            }
        }
        Command::ListPresets => {
            for (name, what) in list_presets() {
                println!("{name:<24} {what}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let sc = load(&config)?;
            println!("ok: {} ({})", sc.name, sc.mode.as_str());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
