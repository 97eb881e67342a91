//! Sybil detection for vehicular networks: pseudonym-pool hashing (P2DAP),
//! RSU footprint trajectories, a speed-switched hybrid of the two, and a
//! deterministic road simulator to compare them.

pub mod crypto;
pub mod footprint;
pub mod hybrid;
pub mod ids;
pub mod p2dap;
pub mod scenario;
pub mod sim;

pub use scenario::{parse_config, Mode, PoolConfig, ScenarioConfig};
pub use sim::{run_scenario, Deployment, Metrics, RunOutput, SimError};
