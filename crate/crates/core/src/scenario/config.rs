use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::HashParams;
use crate::p2dap::{PoolRequest, MIN_PSEUDONYM_LEN};
use crate::sim::RoadModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path} not found")]
    Missing { path: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Missing { .. } => "config-missing",
            ConfigError::Io { .. } => "config-io",
            ConfigError::Malformed { .. } => "config-malformed",
            ConfigError::Invalid(_) => "config-invalid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Hybrid,
    FootprintOnly,
    P2dapOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Hybrid, Mode::FootprintOnly, Mode::P2dapOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::FootprintOnly => "footprint-only",
            Mode::P2dapOnly => "p2dap-only",
        }
    }

    pub fn runs_footprint(&self) -> bool {
        !matches!(self, Mode::P2dapOnly)
    }

    pub fn runs_p2dap(&self) -> bool {
        !matches!(self, Mode::FootprintOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected hybrid, footprint-only or p2dap-only"))
    }
}

/// DMV pool shared by every run that uses this config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub vehicles: usize,
    pub per_vehicle: usize,
    pub w_c: u32,
    pub w_f: u32,
    pub pseudonym_len: usize,
    pub year: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw_budget: Option<u64>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            vehicles: 100,
            per_vehicle: 8,
            w_c: 8,
            w_f: 16,
            pseudonym_len: crate::crypto::DEFAULT_PSEUDONYM_LEN,
            year: 2024,
            seed: 2024,
            draw_budget: None,
        }
    }
}

impl PoolConfig {
    pub fn params(&self) -> Result<HashParams, ConfigError> {
        HashParams::with_widths(self.w_c, self.w_f).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks the pool section on its own.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.params()?;
        let bits = params.w_c() + params.w_f();
        if bits > 32 {
            return Err(ConfigError::Invalid("pool.w_c + pool.w_f must be at most 32".into()));
        }
        if self.vehicles == 0 || (1u64 << bits) < self.vehicles as u64 {
            return Err(ConfigError::Invalid(format!(
                "pool.vehicles ({}) must be in 1..=2^(w_c + w_f)",
                self.vehicles
            )));
        }
        if self.per_vehicle == 0 || self.per_vehicle > u8::MAX as usize {
            return Err(ConfigError::Invalid(format!("pool.per_vehicle ({}) must be in 1..=255", self.per_vehicle)));
        }
        if self.pseudonym_len < MIN_PSEUDONYM_LEN {
            return Err(ConfigError::Invalid(format!("pool.pseudonym_len must be at least {MIN_PSEUDONYM_LEN}")));
        }
        Ok(())
    }

    pub fn request(&self) -> PoolRequest {
        PoolRequest {
            n_vehicles: self.vehicles,
            per_vehicle: self.per_vehicle,
            pseudonym_len: self.pseudonym_len,
            year: self.year,
            seed: self.seed,
            draw_budget: self.draw_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub road: RoadModel,
    pub sim_time_s: f64,
    pub vehicles: usize,
    pub attackers: usize,
    pub forged_count: usize,
    pub scenario_speed_kmh: f64,
    pub speed_threshold_kmh: f64,
    pub mode: Mode,
    pub pool: PoolConfig,
    pub tau_s: f64,
    pub match_length: usize,
    pub beacon_period_s: f64,
    pub seed: u64,
    pub speed_window_s: f64,
    pub recheck_period_s: f64,
    pub packet_loss: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            road: RoadModel::default(),
            sim_time_s: 900.0,
            vehicles: 50,
            attackers: 5,
            forged_count: 2,
            scenario_speed_kmh: 40.0,
            speed_threshold_kmh: 40.0,
            mode: Mode::Hybrid,
            pool: PoolConfig::default(),
            tau_s: 5.0,
            match_length: 2,
            beacon_period_s: 1.0,
            seed: 1,
            speed_window_s: 30.0,
            recheck_period_s: 10.0,
            packet_loss: 0.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.road.validate().map_err(ConfigError::Invalid)?;
        positive("sim_time_s", self.sim_time_s)?;
        positive("scenario_speed_kmh", self.scenario_speed_kmh)?;
        positive("speed_threshold_kmh", self.speed_threshold_kmh)?;
        positive("tau_s", self.tau_s)?;
        positive("beacon_period_s", self.beacon_period_s)?;
        positive("speed_window_s", self.speed_window_s)?;
        positive("recheck_period_s", self.recheck_period_s)?;
        if self.attackers > self.vehicles {
            return Err(ConfigError::Invalid(format!(
                "attackers ({}) exceeds vehicles ({})",
                self.attackers, self.vehicles
            )));
        }
        if self.match_length == 0 {
            return Err(ConfigError::Invalid("match_length must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.packet_loss) {
            return Err(ConfigError::Invalid(format!("packet_loss must be in [0, 1), got {}", self.packet_loss)));
        }
        let pool = &self.pool;
        pool.validate()?;
        if pool.vehicles < self.vehicles {
            return Err(ConfigError::Invalid(format!(
                "pool.vehicles ({}) is smaller than vehicles ({})",
                pool.vehicles, self.vehicles
            )));
        }
        if pool.per_vehicle < self.forged_count + 1 {
            return Err(ConfigError::Invalid(format!(
                "pool.per_vehicle ({}) must be at least forged_count + 1 ({})",
                pool.per_vehicle,
                self.forged_count + 1
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Malformed {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Same config at a different scenario speed and mode.
    pub fn with_run(&self, speed_kmh: f64, mode: Mode) -> Self {
        ScenarioConfig { scenario_speed_kmh: speed_kmh, mode, ..self.clone() }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ConfigError::Missing { path: path.display().to_string() }
        } else {
            ConfigError::Io { path: path.display().to_string(), source: e }
        }
    })?;
    ScenarioConfig::from_json(&text)
}
