use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vanet_sybil_core::p2dap::PseudonymPool;
use vanet_sybil_core::scenario::{
    derive_seeds, parse_config, run_sweep_with, verify_trace, ConfigError, Mode, PoolConfig, ScenarioConfig,
};
use vanet_sybil_core::{run_scenario, Deployment};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "vanet-sybil", version, about = "Sybil detection experiments on a simulated road segment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and summary.
    Simulate {
        /// Scenario config (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides the config's scenario speed.
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, default_value = "s01")]
        scenario_id: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Reuse a pool written by `gen-pool` instead of regenerating it.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Also write the DMV-tier pool, as needed by `verify-trace`.
        #[arg(long)]
        pool_out: Option<PathBuf>,
    },
    /// Run every (speed, mode, scenario) combination and write a results table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "20,40,60,80")]
        speeds: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        #[arg(long, default_value_t = 1)]
        master_seed: u64,
        /// Restrict to these modes (comma separated). All three by default.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write each run's trace into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        pool_out: Option<PathBuf>,
    },
    /// Generate the yearly pseudonym pool.
    GenPool {
        /// Pool parameters are taken from this config's `pool` section, then overridden by flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        per_vehicle: Option<usize>,
        #[arg(long)]
        w_c: Option<u32>,
        #[arg(long)]
        w_f: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// DMV-tier export with fine values.
        #[arg(long)]
        out: PathBuf,
        /// RSB-tier export without fine values.
        #[arg(long)]
        rsb_out: Option<PathBuf>,
    },
    /// Replay a trace and check every derived event.
    VerifyTrace {
        #[arg(long)]
        trace: PathBuf,
        /// DMV-tier pool file.
        #[arg(long)]
        pool: PathBuf,
    },
}

enum Failure {
    Config(ConfigError),
    Runtime(String),
    Divergence(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Loads a pool file against the keys its config derives, or generates it.
fn deployment(pool: &PoolConfig, file: Option<&Path>) -> Result<Deployment, Failure> {
    let Some(file) = file else {
        return Deployment::generate(pool).map_err(runtime);
    };
    let text =
        fs::read_to_string(file).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", file.display())))?;
    let loaded = PseudonymPool::from_json(&text).map_err(runtime)?;
    let keys = Deployment::derive_keys(pool.params()?, pool.seed).map_err(runtime)?;
    loaded.check_against(&keys).map_err(|e| {
        Failure::Runtime(format!("{} was not generated from this config's pool section: {e}", file.display()))
    })?;
    Ok(Deployment { keys, pool: loaded })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, seed, mode, speed, scenario_id, trace, summary, pool, pool_out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = speed {
                cfg.scenario_speed_kmh = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dep = deployment(&cfg.pool, pool.as_deref())?;
            let out = run_scenario(&cfg, &scenario_id, cfg.seed, &dep).map_err(runtime)?;
            write(&trace, &out.trace)?;
            write(&summary, &(serde_json::to_string_pretty(&out.metrics).map_err(runtime)? + "\n"))?;
            if let Some(p) = pool_out {
                write(&p, &dep.pool.to_json())?;
            }
            let m = &out.metrics;
            println!(
                "{} seed {} {} at {} km/h: {}/{} attackers detected ({}%), {} false alarms",
                m.scenario_id,
                m.seed,
                m.mode,
                m.speed_kmh,
                m.attackers_detected,
                m.attackers_total,
                m.rate_pct,
                m.false_alarms
            );
        }
        Command::Sweep { config, speeds, scenarios, master_seed, modes, out, json, trace_dir, pool, pool_out } => {
            let cfg = load_config(config.as_deref())?;
            cfg.validate()?;
            let modes = if modes.is_empty() { Mode::ALL.to_vec() } else { modes };
            let dep = deployment(&cfg.pool, pool.as_deref())?;
            if let Some(dir) = &trace_dir {
                fs::create_dir_all(dir)
                    .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            }
            let seeds = derive_seeds(master_seed, scenarios);
            let write_errors = std::sync::Mutex::new(Vec::new());
            let result = run_sweep_with(&cfg, &speeds, &modes, scenarios, &seeds, &dep, |key, run| {
                if let Some(dir) = &trace_dir {
                    let name = format!("{}_{}_{}.jsonl", key.speed_kmh, key.mode, key.scenario.scenario_id);
                    if let Err(e) = fs::write(dir.join(&name), &run.trace) {
                        write_errors.lock().expect("not poisoned").push(format!("{name}: {e}"));
                    }
                }
            })
            .map_err(runtime)?;
            if let Some(e) = write_errors.into_inner().expect("not poisoned").first() {
                return Err(Failure::Runtime(format!("cannot write trace {e}")));
            }
            write(&out, &result.to_csv())?;
            if let Some(j) = json {
                write(&j, &result.to_json())?;
            }
            if let Some(p) = pool_out {
                write(&p, &dep.pool.to_json())?;
            }
            println!("{:>8}  {:<15} {:>9}", "speed", "mode", "mean rate");
            for a in &result.aggregates {
                println!("{:>8}  {:<15} {:>8.1}%", a.speed_kmh, a.mode.as_str(), a.mean_rate_pct);
            }
        }
        Command::GenPool { config, vehicles, per_vehicle, w_c, w_f, seed, out, rsb_out } => {
            let mut pool = load_config(config.as_deref())?.pool;
            pool.vehicles = vehicles.unwrap_or(pool.vehicles);
            pool.per_vehicle = per_vehicle.unwrap_or(pool.per_vehicle);
            pool.w_c = w_c.unwrap_or(pool.w_c);
            pool.w_f = w_f.unwrap_or(pool.w_f);
            pool.seed = seed.unwrap_or(pool.seed);
            pool.validate()?;
            let dep = Deployment::generate(&pool).map_err(runtime)?;
            write(&out, &dep.pool.to_json())?;
            if let Some(r) = rsb_out {
                write(&r, &dep.pool.rsb_view().to_json())?;
            }
            println!("{} vehicles x {} pseudonyms written to {}", pool.vehicles, pool.per_vehicle, out.display());
        }
        Command::VerifyTrace { trace, pool } => {
            let report = verify_trace(&trace, &pool).map_err(runtime)?;
            if !report.is_verified() {
                return Err(Failure::Divergence(report.to_string()));
            }
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Divergence(e)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_DIVERGENCE)
        }
    }
}
