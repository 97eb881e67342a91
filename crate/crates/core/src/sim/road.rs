//! Straight road geometry and RSU coverage.

use serde::{Deserialize, Serialize};

use crate::ids::RsuId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadModel {
    pub length_m: f64,
    pub lanes: u32,
    pub rsu_positions_m: Vec<f64>,
    pub rsu_coverage_radius_m: f64,
}

impl Default for RoadModel {
    fn default() -> Self {
        RoadModel {
            length_m: 300.0,
            lanes: 2,
            rsu_positions_m: vec![37.5, 112.5, 187.5, 262.5],
            rsu_coverage_radius_m: 75.0,
        }
    }
}

impl RoadModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(format!("road length must be positive, got {}", self.length_m));
        }
        if self.lanes == 0 {
            return Err("road needs at least one lane".into());
        }
        if !(self.rsu_coverage_radius_m > 0.0 && self.rsu_coverage_radius_m.is_finite()) {
            return Err("RSU coverage radius must be positive".into());
        }
        if self.rsu_positions_m.is_empty() {
            return Err("at least one RSU is required".into());
        }
        if self.rsu_positions_m.len() > u16::MAX as usize {
            return Err("too many RSUs".into());
        }
        for &p in &self.rsu_positions_m {
            if !(0.0..=self.length_m).contains(&p) {
                return Err(format!("RSU position {p} is outside [0, {}]", self.length_m));
            }
        }
        let mut sorted = self.rsu_positions_m.clone();
        sorted.sort_by(f64::total_cmp);
        let r = self.rsu_coverage_radius_m;
        let mut covered_to = 0.0;
        for p in sorted {
            if p - r > covered_to {
                return Err(format!("road gap between {covered_to} m and {} m has no RSU coverage", p - r));
            }
            covered_to = f64::max(covered_to, p + r);
        }
        if covered_to < self.length_m {
            return Err(format!("road beyond {covered_to} m has no RSU coverage"));
        }
        Ok(())
    }

    pub fn rsu_ids(&self) -> impl Iterator<Item = RsuId> + '_ {
        (0..self.rsu_positions_m.len()).map(|i| RsuId(i as u16 + 1))
    }

    pub fn rsu_position(&self, id: RsuId) -> f64 {
        self.rsu_positions_m[id.0 as usize - 1]
    }

    /// RSU ids ordered by road position.
    pub fn rsus_along_road(&self) -> Vec<RsuId> {
        let mut ids: Vec<RsuId> = self.rsu_ids().collect();
        ids.sort_by(|a, b| self.rsu_position(*a).total_cmp(&self.rsu_position(*b)).then(a.cmp(b)));
        ids
    }

    pub fn in_coverage(&self, id: RsuId, x: f64) -> bool {
        (x - self.rsu_position(id)).abs() <= self.rsu_coverage_radius_m
    }

    pub fn heard_by(&self, x: f64) -> Vec<RsuId> {
        self.rsu_ids().filter(|&id| self.in_coverage(id, x)).collect()
    }
}

/// Constant-speed forward motion from the road start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub entry_time: f64,
    pub speed_kmh: f64,
}

impl Motion {
    pub fn speed_ms(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn position(&self, t: f64, road: &RoadModel) -> f64 {
        (self.speed_ms() * (t - self.entry_time)).clamp(0.0, road.length_m)
    }

    /// Time the vehicle reaches the road end; infinite when stationary.
    pub fn exit_time(&self, road: &RoadModel) -> f64 {
        if self.speed_kmh > 0.0 {
            self.entry_time + road.length_m / self.speed_ms()
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub rsu: RsuId,
    pub t: f64,
    /// Time spent inside this RSU's coverage while on the road.
    pub dwell_s: f64,
}

/// First entry into each RSU's coverage, ordered by time then RSU id.
pub fn coverage_contacts(road: &RoadModel, motion: &Motion) -> Vec<Contact> {
    let r = road.rsu_coverage_radius_m;
    let mut out: Vec<Contact> = road
        .rsu_ids()
        .filter_map(|id| {
            let p = road.rsu_position(id);
            let x_in = (p - r).max(0.0);
            let x_out = (p + r).min(road.length_m);
            if x_in >= road.length_m {
                return None;
            }
            if motion.speed_kmh > 0.0 {
                let v = motion.speed_ms();
                Some(Contact { rsu: id, t: motion.entry_time + x_in / v, dwell_s: (x_out - x_in) / v })
            } else if x_in == 0.0 {
                Some(Contact { rsu: id, t: motion.entry_time, dwell_s: f64::INFINITY })
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.rsu.cmp(&b.rsu)));
    out
}
