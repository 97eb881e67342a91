//! Entity identifiers shared across detectors and the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::SignerId;

/// Index of a vehicle slot in a DMV pseudonym pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

/// Ground-truth identity of a simulated physical vehicle. Only the scoring
/// layer maps detector evidence onto these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhysicalId(pub u32);

impl fmt::Display for PhysicalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "veh-{}", self.0)
    }
}

/// Roadside unit / roadside box. One physical box plays both roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RsuId(pub u16);

impl RsuId {
    pub fn signer(&self) -> SignerId {
        SignerId(self.to_string())
    }
}

impl fmt::Display for RsuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rsu-{}", self.0)
    }
}

/// Identity label claimed on the air. Carries no owner information.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityLabel(pub String);

impl IdentityLabel {
    pub fn new(label: impl Into<String>) -> Self {
        IdentityLabel(label.into())
    }
}

impl fmt::Display for IdentityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
