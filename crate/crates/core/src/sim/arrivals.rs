//! Arrival plan and per-run random streams.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::road::Motion;
use crate::crypto::Pseudonym;
use crate::ids::{IdentityLabel, PhysicalId, VehicleId};
use crate::p2dap::PseudonymPool;
use crate::scenario::ScenarioConfig;

/// Speed factor `z` is redrawn until `|z| <= TRUNCATION`; speed is `s * (1 + SPEED_CV * z)`.
pub const SPEED_CV: f64 = 0.1;
pub const TRUNCATION: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Honest,
    Sybil,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleAgent {
    pub physical_id: PhysicalId,
    pub kind: AgentKind,
    pub lane: u32,
    pub motion: Motion,
    pub beacon_phase_s: f64,
    pub pool_vehicle: Option<VehicleId>,
    /// Honest: one. Sybil: the real identity first, then the forged ones.
    pub identities: Vec<IdentityLabel>,
    /// One per identity, all from this vehicle's own pool entry.
    pub pseudonyms: Vec<Pseudonym>,
}

/// Independent random streams of one run, derived from `SHA-256(seed || scenario_id || label)`.
pub struct RunStreams {
    pub mobility: ChaCha8Rng,
    pub assign: ChaCha8Rng,
    pub keys: ChaCha8Rng,
    pub nonces: ChaCha8Rng,
    pub loss: ChaCha8Rng,
}

pub fn derive_stream(seed: u64, scenario_id: &str, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scenario_id.as_bytes());
    h.update([0]);
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl RunStreams {
    pub fn new(seed: u64, scenario_id: &str) -> Self {
        RunStreams {
            mobility: derive_stream(seed, scenario_id, "mobility"),
            assign: derive_stream(seed, scenario_id, "assign"),
            keys: derive_stream(seed, scenario_id, "keys"),
            nonces: derive_stream(seed, scenario_id, "nonces"),
            loss: derive_stream(seed, scenario_id, "loss"),
        }
    }
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

fn fresh_label<R: RngCore>(rng: &mut R, used: &mut HashSet<String>) -> IdentityLabel {
    loop {
        let label = format!("id-{:08x}", rng.next_u32());
        if used.insert(label.clone()) {
            return IdentityLabel(label);
        }
    }
}

/// Draw order does not depend on speed or mode, so runs that differ only in
/// those share their arrival plan.
pub fn generate_arrivals<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> Vec<VehicleAgent> {
    let n = config.vehicles;
    let mut entries: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..config.sim_time_s)).collect();
    entries.sort_by(f64::total_cmp);
    let per_vehicle: Vec<(u32, f64, f64)> = (0..n)
        .map(|_| {
            let lane = rng.gen_range(0..config.road.lanes);
            let z = truncated_normal(rng);
            let phase = rng.gen_range(0.0..config.beacon_period_s);
            (lane, z, phase)
        })
        .collect();
    let attackers: HashSet<usize> = index::sample(rng, n, config.attackers.min(n)).into_iter().collect();
    let mut used = HashSet::new();
    entries
        .into_iter()
        .zip(per_vehicle)
        .enumerate()
        .map(|(i, (entry_time, (lane, z, phase)))| {
            let kind = if attackers.contains(&i) { AgentKind::Sybil } else { AgentKind::Honest };
            let n_ids = match kind {
                AgentKind::Honest => 1,
                AgentKind::Sybil => 1 + config.forged_count,
            };
            let identities = (0..n_ids).map(|_| fresh_label(rng, &mut used)).collect();
            VehicleAgent {
                physical_id: PhysicalId(i as u32),
                kind,
                lane,
                motion: Motion { entry_time, speed_kmh: config.scenario_speed_kmh * (1.0 + SPEED_CV * z) },
                beacon_phase_s: phase,
                pool_vehicle: None,
                identities,
                pseudonyms: Vec::new(),
            }
        })
        .collect()
}

/// Hands every agent a distinct pool entry, drawn without replacement.
pub fn assign_pool_entries<R: Rng>(
    agents: &mut [VehicleAgent],
    pool: &PseudonymPool,
    rng: &mut R,
) -> Result<(), String> {
    if agents.len() > pool.len() {
        return Err(format!("pool holds {} vehicles, run needs {}", pool.len(), agents.len()));
    }
    let picks = index::sample(rng, pool.len(), agents.len());
    for (agent, pick) in agents.iter_mut().zip(picks) {
        let entry = &pool.vehicles()[pick];
        if entry.pseudonyms.len() < agent.identities.len() {
            return Err(format!(
                "pool vehicle {} has {} pseudonyms, agent needs {}",
                pick,
                entry.pseudonyms.len(),
                agent.identities.len()
            ));
        }
        agent.pool_vehicle = Some(entry.vehicle_id);
        agent.pseudonyms = entry.pseudonyms[..agent.identities.len()].to_vec();
    }
    Ok(())
}
