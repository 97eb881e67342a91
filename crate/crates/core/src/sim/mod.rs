//! Deterministic discrete-event simulation of one road segment.

pub mod arrivals;
mod engine;
pub mod pipeline;
pub mod road;
pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{DmvKeys, HashParams};
use crate::footprint::FootprintError;
use crate::hybrid::HybridError;
use crate::ids::{IdentityLabel, RsuId, VehicleId};
use crate::p2dap::{generate_pool, P2dapError, PseudonymPool};
use crate::scenario::{ConfigError, Mode, PoolConfig, ScenarioConfig};

pub use arrivals::{generate_arrivals, AgentKind, VehicleAgent};
pub use engine::{beacon_time, recheck_time, run_scenario, RunOutput};
pub use road::{coverage_contacts, Contact, Motion, RoadModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    P2dap(#[from] P2dapError),
    #[error(transparent)]
    Footprint(#[from] FootprintError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error("pool: {0}")]
    Pool(String),
    #[error("RSU {0} is not on this road")]
    UnknownRsu(RsuId),
    #[error("identity {0} belongs to no vehicle")]
    UnknownIdentity(IdentityLabel),
    #[error("pool vehicle {0:?} is not assigned in this run")]
    UnassignedPoolVehicle(VehicleId),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerDetector {
    pub footprint: usize,
    pub p2dap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario_id: String,
    pub seed: u64,
    pub mode: Mode,
    pub speed_kmh: f64,
    pub attackers_total: usize,
    pub attackers_detected: usize,
    pub rate_pct: f64,
    pub false_alarms: usize,
    pub per_detector_counts: PerDetector,
    pub false_convictions: usize,
}

/// DMV keys and the yearly pool, shared by every run of a sweep.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub keys: DmvKeys,
    pub pool: PseudonymPool,
}

impl Deployment {
    pub fn generate(pool: &PoolConfig) -> Result<Self, SimError> {
        let params = pool.params()?;
        let keys = Self::derive_keys(params, pool.seed)?;
        let generated = generate_pool(&keys, &pool.request())?;
        Ok(Deployment { keys, pool: generated })
    }

    pub fn derive_keys(params: HashParams, pool_seed: u64) -> Result<DmvKeys, SimError> {
        let mut rng = arrivals::derive_stream(pool_seed, "dmv", "keys");
        Ok(DmvKeys::generate(params, &mut rng).map_err(P2dapError::from)?)
    }

    pub fn check_matches(&self, config: &ScenarioConfig) -> Result<(), SimError> {
        let params = config.pool.params()?;
        if self.pool.params() != params || self.keys.params() != params {
            return Err(SimError::Pool("deployment widths differ from config".into()));
        }
        if self.pool.len() < config.vehicles {
            return Err(SimError::Pool(format!(
                "pool holds {} vehicles, config needs {}",
                self.pool.len(),
                config.vehicles
            )));
        }
        Ok(())
    }
}
