//! Speed-driven detector selection and the per-run detection ledger.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Pseudonym;
use crate::ids::{IdentityLabel, PhysicalId, RsuId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("speed threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("total attackers must be at least 1")]
    NoAttackers,
    #[error("counted {counted} exceeds total {total}")]
    CountExceedsTotal { counted: usize, total: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Footprint,
    P2dap,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Footprint => "footprint",
            Detector::P2dap => "p2dap",
        })
    }
}

/// Sliding-window mean over speed samples.
#[derive(Clone, Debug)]
pub struct SpeedMonitor {
    window: f64,
    samples: VecDeque<(f64, f64)>,
    last: f64,
}

impl SpeedMonitor {
    pub fn new(window: f64) -> Self {
        SpeedMonitor { window, samples: VecDeque::new(), last: 0.0 }
    }

    /// Samples must arrive in nondecreasing time order.
    pub fn record(&mut self, t: f64, speed_kmh: f64) {
        self.samples.push_back((t, speed_kmh));
    }

    /// Mean of samples with time in `(now - window, now]`. With no such
    /// samples the previous result is returned, 0 before any.
    pub fn average_speed(&mut self, now: f64) -> f64 {
        while self.samples.front().is_some_and(|&(t, _)| t <= now - self.window) {
            self.samples.pop_front();
        }
        let (sum, n) =
            self.samples.iter().take_while(|&&(t, _)| t <= now).fold((0.0, 0usize), |(s, n), &(_, v)| (s + v, n + 1));
        if n > 0 {
            self.last = sum / n as f64;
        }
        self.last
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSelection {
    pub active: Detector,
    pub threshold: f64,
}

/// Footprint strictly above the threshold, P2DAP otherwise.
pub fn select_detector(avg_kmh: f64, threshold_kmh: f64) -> Result<DetectorSelection, HybridError> {
    if threshold_kmh.is_nan() || threshold_kmh <= 0.0 {
        return Err(HybridError::NonPositiveThreshold(threshold_kmh));
    }
    let active = if avg_kmh > threshold_kmh { Detector::Footprint } else { Detector::P2dap };
    Ok(DetectorSelection { active, threshold: threshold_kmh })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerDecision {
    pub t: f64,
    pub avg_speed_kmh: f64,
    pub active: Detector,
}

#[derive(Clone, Debug)]
pub struct HybridController {
    monitor: SpeedMonitor,
    selection: DetectorSelection,
}

impl HybridController {
    pub fn new(window: f64, threshold_kmh: f64) -> Result<Self, HybridError> {
        let selection = select_detector(0.0, threshold_kmh)?;
        Ok(HybridController { monitor: SpeedMonitor::new(window), selection })
    }

    pub fn record_speed(&mut self, t: f64, speed_kmh: f64) {
        self.monitor.record(t, speed_kmh);
    }

    pub fn recheck(&mut self, now: f64) -> ControllerDecision {
        let avg = self.monitor.average_speed(now);
        self.selection = select_detector(avg, self.selection.threshold).expect("threshold checked at construction");
        ControllerDecision { t: now, avg_speed_kmh: avg, active: self.selection.active }
    }

    pub fn selection(&self) -> DetectorSelection {
        self.selection
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    Report { rsb_id: RsuId, pseudonyms: Vec<Pseudonym> },
    IdentityGroup { identities: Vec<IdentityLabel> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detector: Detector,
    pub time: f64,
    /// Filled in by the scoring layer, never by a detector.
    pub physical_attacker: PhysicalId,
    pub evidence: Evidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOutcome {
    Counted,
    Duplicate,
    InactiveDetector,
}

#[derive(Clone, Debug, Default)]
pub struct DetectionLedger {
    counted: BTreeMap<PhysicalId, DetectionEvent>,
    log: Vec<(DetectionEvent, RecordOutcome)>,
}

impl DetectionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_detection(&mut self, event: DetectionEvent, active: Detector) -> RecordOutcome {
        let outcome = match self.counted.entry(event.physical_attacker) {
            Entry::Occupied(_) => RecordOutcome::Duplicate,
            Entry::Vacant(_) if event.detector != active => RecordOutcome::InactiveDetector,
            Entry::Vacant(slot) => {
                slot.insert(event.clone());
                RecordOutcome::Counted
            }
        };
        self.log.push((event, outcome));
        outcome
    }

    pub fn counted(&self) -> usize {
        self.counted.len()
    }

    pub fn is_counted(&self, who: PhysicalId) -> bool {
        self.counted.contains_key(&who)
    }

    pub fn counted_events(&self) -> impl Iterator<Item = &DetectionEvent> {
        self.counted.values()
    }

    pub fn counted_by(&self, detector: Detector) -> usize {
        self.counted.values().filter(|e| e.detector == detector).count()
    }

    pub fn log(&self) -> &[(DetectionEvent, RecordOutcome)] {
        &self.log
    }
}

pub fn detection_rate(counted: usize, total: usize) -> Result<f64, HybridError> {
    if total == 0 {
        return Err(HybridError::NoAttackers);
    }
    if counted > total {
        return Err(HybridError::CountExceedsTotal { counted, total });
    }
    Ok(100.0 * counted as f64 / total as f64)
}
