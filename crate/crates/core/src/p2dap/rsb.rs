//! Roadside-box overhearing and coarse-group matching.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::crypto::{CoarseHasher, CoarseValue, Pseudonym};
use crate::ids::{IdentityLabel, RsuId};

/// One over-the-air safety beacon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub claimed_identity: IdentityLabel,
    pub pseudonym: Pseudonym,
    pub timestamp: f64,
    pub position_m: f64,
    pub speed_kmh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousReport {
    pub rsb_id: RsuId,
    pub window_start: f64,
    pub window_end: f64,
    pub coarse: CoarseValue,
    /// Beacon whose arrival completed the new pairs.
    pub trigger: Pseudonym,
    /// Sorted; contains `trigger` and every newly matched partner.
    pub pseudonyms: Vec<Pseudonym>,
}

impl SuspiciousReport {
    /// Unordered pairs this report newly raises: `(trigger, partner)`.
    pub fn pairs(&self) -> impl Iterator<Item = (Pseudonym, Pseudonym)> + '_ {
        self.pseudonyms.iter().filter(move |p| **p != self.trigger).map(move |p| ordered_pair(&self.trigger, p))
    }
}

pub(crate) fn ordered_pair(a: &Pseudonym, b: &Pseudonym) -> (Pseudonym, Pseudonym) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Index of the dedup window containing `t`.
pub fn window_index(t: f64, tau: f64) -> u64 {
    (t / tau).floor().max(0.0) as u64
}

#[derive(Clone, Debug)]
struct Heard {
    pseudonym: Pseudonym,
    coarse: CoarseValue,
    timestamp: f64,
}

/// Per-RSB observation buffer. Beacons must be fed in nondecreasing time
/// order. Holds no fine-grained key material.
#[derive(Clone, Debug)]
pub struct RsbObserver {
    rsb_id: RsuId,
    tau: f64,
    buffer: VecDeque<Heard>,
    reported_window: u64,
    reported: HashSet<(Pseudonym, Pseudonym)>,
}

impl RsbObserver {
    pub fn new(rsb_id: RsuId, tau: f64) -> Self {
        RsbObserver { rsb_id, tau, buffer: VecDeque::new(), reported_window: 0, reported: HashSet::new() }
    }

    pub fn rsb_id(&self) -> RsuId {
        self.rsb_id
    }

    /// Hashes the beacon's pseudonym under `k_c` and observes it.
    pub fn rsb_observe(&mut self, beacon: &Beacon, hasher: &CoarseHasher) -> Option<SuspiciousReport> {
        let coarse = hasher.coarse(&beacon.pseudonym);
        self.observe_with_coarse(beacon, coarse)
    }

    /// Observation with the coarse value already computed by the caller.
    pub fn observe_with_coarse(&mut self, beacon: &Beacon, coarse: CoarseValue) -> Option<SuspiciousReport> {
        let now = beacon.timestamp;
        while self.buffer.front().is_some_and(|h| now - h.timestamp > self.tau) {
            self.buffer.pop_front();
        }
        let window = window_index(now, self.tau);
        if window != self.reported_window {
            self.reported.clear();
            self.reported_window = window;
        }

        let mut partners: Vec<&Heard> = Vec::new();
        for heard in &self.buffer {
            if heard.coarse != coarse || heard.pseudonym == beacon.pseudonym {
                continue;
            }
            if partners.iter().any(|p| p.pseudonym == heard.pseudonym) {
                continue;
            }
            let pair = ordered_pair(&beacon.pseudonym, &heard.pseudonym);
            if !self.reported.contains(&pair) {
                partners.push(heard);
            }
        }

        let report = (!partners.is_empty()).then(|| {
            let window_start = partners.iter().map(|h| h.timestamp).fold(now, f64::min);
            let mut pseudonyms: Vec<Pseudonym> = partners.iter().map(|h| h.pseudonym.clone()).collect();
            pseudonyms.push(beacon.pseudonym.clone());
            pseudonyms.sort();
            SuspiciousReport {
                rsb_id: self.rsb_id,
                window_start,
                window_end: now,
                coarse,
                trigger: beacon.pseudonym.clone(),
                pseudonyms,
            }
        });
        if let Some(r) = &report {
            self.reported.extend(r.pairs());
        }

        self.buffer.push_back(Heard { pseudonym: beacon.pseudonym.clone(), coarse, timestamp: now });
        report
    }
}
