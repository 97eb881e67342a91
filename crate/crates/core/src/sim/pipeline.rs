//! Detector wiring and scoring, shared by the engine and trace replay.
//!
//! The pipeline consumes world inputs (vehicle ground truth, beacons,
//! authorized tags, recheck ticks) and returns the derived trace events.
//! Ground truth is consulted only in [`Pipeline::score`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Metrics, SimError};
use crate::crypto::{CoarseHasher, CoarseValue, Pseudonym};
use crate::footprint::{LinkTag, SeriesIndex, TagVerifier, Trajectory};
use crate::hybrid::{
    detection_rate, DetectionEvent, DetectionLedger, Detector, Evidence, HybridController, RecordOutcome,
};
use crate::ids::{IdentityLabel, PhysicalId, RsuId, VehicleId};
use crate::p2dap::{dmv_adjudicate, Beacon, FineGrouping, P2dapError, PseudonymPool, RsbObserver, Verdict};
use crate::scenario::{Mode, ScenarioConfig};
use crate::sim::arrivals::AgentKind;
use crate::sim::trace::{DetectionOutcome, TraceEvent};

/// Coarse projection as available to an RSB.
pub trait CoarseClassifier {
    fn coarse_of(&self, p: &Pseudonym) -> Result<CoarseValue, P2dapError>;
}

impl CoarseClassifier for CoarseHasher {
    fn coarse_of(&self, p: &Pseudonym) -> Result<CoarseValue, P2dapError> {
        Ok(self.coarse(p))
    }
}

impl CoarseClassifier for PseudonymPool {
    fn coarse_of(&self, p: &Pseudonym) -> Result<CoarseValue, P2dapError> {
        self.coarse_of(p).ok_or_else(|| P2dapError::UnknownPseudonym(p.clone()))
    }
}

#[derive(Default)]
struct GroundTruth {
    identity_owner: HashMap<IdentityLabel, PhysicalId>,
    pool_owner: HashMap<VehicleId, PhysicalId>,
    attackers: BTreeSet<PhysicalId>,
}

pub struct Pipeline<'a, C, F, V> {
    config: &'a ScenarioConfig,
    scenario_id: String,
    seed: u64,
    coarse: &'a C,
    dmv: &'a F,
    verifier: &'a V,
    pool: &'a PseudonymPool,
    pseudonym_len: usize,
    observers: BTreeMap<RsuId, RsbObserver>,
    controller: Option<HybridController>,
    trajectories: HashMap<IdentityLabel, Trajectory>,
    index: SeriesIndex,
    ledger: DetectionLedger,
    truth: GroundTruth,
    false_alarms: usize,
    false_convictions: usize,
}

impl<'a, C: CoarseClassifier, F: FineGrouping, V: TagVerifier> Pipeline<'a, C, F, V> {
    pub fn new(
        config: &'a ScenarioConfig,
        scenario_id: &str,
        seed: u64,
        coarse: &'a C,
        dmv: &'a F,
        verifier: &'a V,
        pool: &'a PseudonymPool,
    ) -> Result<Self, SimError> {
        let controller = match config.mode {
            Mode::Hybrid => Some(HybridController::new(config.speed_window_s, config.speed_threshold_kmh)?),
            _ => None,
        };
        let observers = config.road.rsu_ids().map(|id| (id, RsbObserver::new(id, config.tau_s))).collect();
        Ok(Pipeline {
            config,
            scenario_id: scenario_id.to_string(),
            seed,
            coarse,
            dmv,
            verifier,
            pool,
            pseudonym_len: pool.pseudonym_len().unwrap_or(config.pool.pseudonym_len),
            observers,
            controller,
            trajectories: HashMap::new(),
            index: SeriesIndex::new(config.match_length),
            ledger: DetectionLedger::new(),
            truth: GroundTruth::default(),
            false_alarms: 0,
            false_convictions: 0,
        })
    }

    pub fn active_detector(&self) -> Detector {
        match (&self.controller, self.config.mode) {
            (Some(c), _) => c.selection().active,
            (None, Mode::FootprintOnly) => Detector::Footprint,
            _ => Detector::P2dap,
        }
    }

    pub fn is_terminated(&self, who: PhysicalId) -> bool {
        self.ledger.is_counted(who)
    }

    pub fn register_vehicle(
        &mut self,
        physical: PhysicalId,
        kind: AgentKind,
        pool_vehicle: VehicleId,
        identities: &[IdentityLabel],
    ) {
        for id in identities {
            self.truth.identity_owner.insert(id.clone(), physical);
        }
        self.truth.pool_owner.insert(pool_vehicle, physical);
        if kind == AgentKind::Sybil {
            self.truth.attackers.insert(physical);
        }
    }

    pub fn on_beacon(&mut self, beacon: &Beacon, heard_by: &[RsuId]) -> Result<Vec<TraceEvent>, SimError> {
        let t = beacon.timestamp;
        if let Some(c) = &mut self.controller {
            if !heard_by.is_empty() {
                c.record_speed(t, beacon.speed_kmh);
            }
        }
        let mut out = Vec::new();
        if !self.config.mode.runs_p2dap() || heard_by.is_empty() {
            return Ok(out);
        }
        let coarse = self.coarse.coarse_of(&beacon.pseudonym)?;
        for rsu in heard_by {
            let observer = self.observers.get_mut(rsu).ok_or(SimError::UnknownRsu(*rsu))?;
            let Some(report) = observer.observe_with_coarse(beacon, coarse) else {
                continue;
            };
            let adjudication = dmv_adjudicate(&report, self.dmv, self.pseudonym_len)?;
            out.push(TraceEvent::Report(report));
            match &adjudication.verdict {
                Verdict::FalseAlarm => {
                    self.false_alarms += 1;
                    out.push(TraceEvent::Adjudication(adjudication));
                }
                Verdict::Sybil { groups } => {
                    let groups = groups.clone();
                    out.push(TraceEvent::Adjudication(adjudication));
                    for g in groups {
                        let mut owners = BTreeSet::new();
                        for p in &g.pseudonyms {
                            let v = self.pool.owner_of(p).ok_or_else(|| P2dapError::UnknownPseudonym(p.clone()))?;
                            owners.insert(*self.truth.pool_owner.get(&v).ok_or(SimError::UnassignedPoolVehicle(v))?);
                        }
                        let evidence = Evidence::Report { rsb_id: *rsu, pseudonyms: g.pseudonyms };
                        self.score(Detector::P2dap, t, evidence, owners, &mut out);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Appends one authorized tag to every identity that presented it.
    pub fn on_tag(&mut self, tag: &LinkTag, identities: &[IdentityLabel]) -> Result<Vec<TraceEvent>, SimError> {
        let mut out = Vec::new();
        if !self.config.mode.runs_footprint() {
            return Ok(out);
        }
        for id in identities {
            let traj = self.trajectories.entry(id.clone()).or_insert_with(|| Trajectory::new(id.clone()));
            traj.append_tag(tag.clone(), self.verifier)?;
        }
        for id in identities {
            self.index.update(&self.trajectories[id]);
        }
        let groups: BTreeSet<Vec<IdentityLabel>> = identities.iter().filter_map(|id| self.index.group_of(id)).collect();
        for g in groups {
            let owners: BTreeSet<PhysicalId> = g
                .iter()
                .map(|i| self.truth.identity_owner.get(i).copied().ok_or_else(|| SimError::UnknownIdentity(i.clone())))
                .collect::<Result<_, _>>()?;
            self.score(
                Detector::Footprint,
                tag.issue_time,
                Evidence::IdentityGroup { identities: g },
                owners,
                &mut out,
            );
        }
        Ok(out)
    }

    pub fn on_recheck(&mut self, now: f64) -> Option<TraceEvent> {
        let c = self.controller.as_mut()?;
        let d = c.recheck(now);
        Some(TraceEvent::ControllerDecision { avg_speed_kmh: d.avg_speed_kmh, active: d.active })
    }

    /// Maps evidence onto physical vehicles and records it.
    fn score(
        &mut self,
        detector: Detector,
        t: f64,
        evidence: Evidence,
        owners: BTreeSet<PhysicalId>,
        out: &mut Vec<TraceEvent>,
    ) {
        let active = self.active_detector();
        for physical in owners {
            if !self.truth.attackers.contains(&physical) {
                self.false_convictions += 1;
                out.push(TraceEvent::Detection {
                    detector,
                    physical,
                    evidence: evidence.clone(),
                    outcome: DetectionOutcome::FalseConviction,
                });
                continue;
            }
            let event = DetectionEvent { detector, time: t, physical_attacker: physical, evidence: evidence.clone() };
            let outcome = match self.ledger.record_detection(event, active) {
                RecordOutcome::Counted => DetectionOutcome::Counted,
                RecordOutcome::Duplicate => DetectionOutcome::Duplicate,
                RecordOutcome::InactiveDetector => DetectionOutcome::InactiveDetector,
            };
            out.push(TraceEvent::Detection { detector, physical, evidence: evidence.clone(), outcome });
            if outcome == DetectionOutcome::Counted {
                out.push(TraceEvent::AttackTerminated { physical });
            }
        }
    }

    pub fn metrics(&self) -> Result<Metrics, SimError> {
        let total = self.truth.attackers.len();
        let detected = self.ledger.counted();
        let rate_pct = if total == 0 { 0.0 } else { detection_rate(detected, total)? };
        Ok(Metrics {
            scenario_id: self.scenario_id.clone(),
            seed: self.seed,
            mode: self.config.mode,
            speed_kmh: self.config.scenario_speed_kmh,
            attackers_total: total,
            attackers_detected: detected,
            rate_pct,
            false_alarms: self.false_alarms,
            per_detector_counts: super::PerDetector {
                footprint: self.ledger.counted_by(Detector::Footprint),
                p2dap: self.ledger.counted_by(Detector::P2dap),
            },
            false_convictions: self.false_convictions,
        })
    }

    pub fn ledger(&self) -> &DetectionLedger {
        &self.ledger
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }
}
