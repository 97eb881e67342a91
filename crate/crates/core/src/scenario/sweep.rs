use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::results::{RunRow, SweepResult};
use super::{Mode, ScenarioConfig};
use crate::sim::{run_scenario, Deployment, RunOutput, SimError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Plan(String),
    #[error("run {scenario_id} (seed {seed}, {mode}, {speed_kmh} km/h) failed: {source}")]
    Run {
        speed_kmh: f64,
        mode: Mode,
        scenario_id: String,
        seed: u64,
        #[source]
        source: SimError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioSeed {
    pub scenario_id: String,
    pub seed: u64,
}

/// `n` scenario seeds derived from `master`, with ids `s01`, `s02`, ...
pub fn derive_seeds(master: u64, n: usize) -> Vec<ScenarioSeed> {
    (0..n)
        .map(|i| {
            let mut h = Sha256::new();
            h.update(b"sweep");
            h.update(master.to_le_bytes());
            h.update((i as u64).to_le_bytes());
            let d = h.finalize();
            ScenarioSeed {
                scenario_id: format!("s{:02}", i + 1),
                seed: u64::from_le_bytes(d[..8].try_into().expect("8 bytes")),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub speed_kmh: f64,
    pub mode: Mode,
    pub scenario: ScenarioSeed,
}

/// Runs every (speed, mode, seed) combination over all three modes.
pub fn run_sweep(
    base: &ScenarioConfig,
    speeds: &[f64],
    scenarios: usize,
    seeds: &[ScenarioSeed],
    deployment: &Deployment,
) -> Result<SweepResult, SweepError> {
    run_sweep_with(base, speeds, &Mode::ALL, scenarios, seeds, deployment, |_, _| {})
}

/// As [`run_sweep`], with a caller-chosen mode list and a hook that sees
/// every run's output. Runs execute in parallel; results are collected in
/// (speed, mode, seed) order.
pub fn run_sweep_with<I>(
    base: &ScenarioConfig,
    speeds: &[f64],
    modes: &[Mode],
    scenarios: usize,
    seeds: &[ScenarioSeed],
    deployment: &Deployment,
    inspect: I,
) -> Result<SweepResult, SweepError>
where
    I: Fn(&RunKey, &RunOutput) + Sync,
{
    if scenarios != seeds.len() {
        return Err(SweepError::Plan(format!("{scenarios} scenarios requested but {} seeds given", seeds.len())));
    }
    if speeds.is_empty() {
        return Err(SweepError::Plan("no speeds given".into()));
    }
    let mut jobs = Vec::new();
    for &speed in speeds {
        for &mode in modes {
            for s in seeds {
                jobs.push(RunKey { speed_kmh: speed, mode, scenario: s.clone() });
            }
        }
    }
    let rows: Vec<RunRow> = jobs
        .par_iter()
        .map(|key| {
            // the recorded config names the seed actually used
            let cfg = ScenarioConfig { seed: key.scenario.seed, ..base.with_run(key.speed_kmh, key.mode) };
            let out =
                run_scenario(&cfg, &key.scenario.scenario_id, key.scenario.seed, deployment).map_err(|source| {
                    SweepError::Run {
                        speed_kmh: key.speed_kmh,
                        mode: key.mode,
                        scenario_id: key.scenario.scenario_id.clone(),
                        seed: key.scenario.seed,
                        source,
                    }
                })?;
            inspect(key, &out);
            Ok(RunRow {
                speed_kmh: key.speed_kmh,
                mode: key.mode,
                scenario_id: key.scenario.scenario_id.clone(),
                seed: key.scenario.seed,
                detected: out.metrics.attackers_detected,
                total: out.metrics.attackers_total,
                rate_pct: out.metrics.rate_pct,
            })
        })
        .collect::<Result<_, SweepError>>()?;
    Ok(SweepResult::from_runs(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derive_seeds(1, 10);
        assert_eq!(a, derive_seeds(1, 10));
        assert_eq!(a[0].scenario_id, "s01");
        assert_eq!(a[9].scenario_id, "s10");
        let mut uniq: Vec<u64> = a.iter().map(|s| s.seed).collect();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
        assert_ne!(derive_seeds(2, 1)[0].seed, a[0].seed);
    }
}
