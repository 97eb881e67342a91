use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use super::arrivals::{assign_pool_entries, generate_arrivals, AgentKind, RunStreams, VehicleAgent};
use super::pipeline::Pipeline;
use super::road::coverage_contacts;
use super::trace::{nonce_hex, TraceEvent, TraceWriter};
use super::{Deployment, Metrics, SimError};
use crate::footprint::{broadcast_tags, RsuDirectory, RsuState, TrustAuthority};
use crate::ids::{IdentityLabel, RsuId};
use crate::p2dap::Beacon;
use crate::scenario::{Mode, ScenarioConfig};

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: String,
    pub metrics: Metrics,
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Arrival(usize),
    Contact(usize, RsuId),
    Beacon(usize, u64),
    Recheck(u64),
}

struct Scheduled {
    t: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest (t, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    horizon: f64,
}

impl Queue {
    fn push(&mut self, t: f64, kind: Kind) {
        if t < self.horizon {
            self.heap.push(Scheduled { t, seq: self.seq, kind });
            self.seq += 1;
        }
    }
}

/// Time of beacon `k` of an agent. Also used by trace replay.
pub fn beacon_time(agent_entry: f64, phase: f64, period: f64, k: u64) -> f64 {
    agent_entry + phase + k as f64 * period
}

pub fn recheck_time(period: f64, k: u64) -> f64 {
    k as f64 * period
}

fn active_identities(agent: &VehicleAgent, terminated: bool) -> usize {
    if terminated {
        1
    } else {
        agent.identities.len()
    }
}

/// Runs one scenario. Identical inputs give a byte-identical trace.
pub fn run_scenario(
    config: &ScenarioConfig,
    scenario_id: &str,
    seed: u64,
    deployment: &Deployment,
) -> Result<RunOutput, SimError> {
    config.validate()?;
    deployment.check_matches(config)?;
    let road = &config.road;
    let mut streams = RunStreams::new(seed, scenario_id);
    let mut agents = generate_arrivals(config, &mut streams.mobility);
    assign_pool_entries(&mut agents, &deployment.pool, &mut streams.assign).map_err(SimError::Pool)?;

    let rsus: Vec<RsuState> = road.rsu_ids().map(|id| RsuState::generate(id, &mut streams.keys)).collect();
    let ta = TrustAuthority::generate(&mut streams.keys);
    let mut directory = RsuDirectory::new();
    for r in &rsus {
        directory.register_rsu(r);
    }
    directory.register_ta(&ta);
    directory.link_chain(&road.rsus_along_road())?;
    let mut rsus = rsus;

    let mut trace = TraceWriter::new();
    trace.emit(0.0, &TraceEvent::RunStart { scenario_id: scenario_id.to_string(), seed, config: config.clone() });
    let mut deliveries = Vec::new();
    for r in &rsus {
        deliveries.extend(broadcast_tags(r, &directory, 0.0));
    }
    for (to, ann) in deliveries {
        trace.emit(0.0, &TraceEvent::Announce { from: ann.from, to });
        rsus[to.0 as usize - 1].receive(ann, &directory)?;
    }

    let coarse = deployment.keys.coarse_hasher();
    let mut pipeline =
        Pipeline::new(config, scenario_id, seed, coarse, &deployment.keys, &directory, &deployment.pool)?;

    let mut queue = Queue { heap: BinaryHeap::new(), seq: 0, horizon: config.sim_time_s };
    if config.mode == Mode::Hybrid {
        queue.push(0.0, Kind::Recheck(0));
    }
    for (i, a) in agents.iter().enumerate() {
        queue.push(a.motion.entry_time, Kind::Arrival(i));
    }

    while let Some(Scheduled { t, kind, .. }) = queue.heap.pop() {
        match kind {
            Kind::Recheck(k) => {
                if let Some(decision) = pipeline.on_recheck(t) {
                    trace.emit(t, &decision);
                }
                queue.push(recheck_time(config.recheck_period_s, k + 1), Kind::Recheck(k + 1));
            }
            Kind::Arrival(i) => {
                let a = &agents[i];
                let contacts = coverage_contacts(road, &a.motion);
                let pool_vehicle = a.pool_vehicle.expect("assigned above");
                trace.emit(
                    t,
                    &TraceEvent::Vehicle {
                        physical: a.physical_id,
                        agent: a.kind,
                        lane: a.lane,
                        entry_time: a.motion.entry_time,
                        speed_kmh: a.motion.speed_kmh,
                        beacon_phase_s: a.beacon_phase_s,
                        exit_time: a.motion.exit_time(road),
                        pool_vehicle,
                        identities: a.identities.clone(),
                        pseudonyms: a.pseudonyms.clone(),
                        contacts: contacts.clone(),
                    },
                );
                pipeline.register_vehicle(a.physical_id, a.kind, pool_vehicle, &a.identities);
                if config.mode.runs_footprint() {
                    for c in &contacts {
                        queue.push(c.t, Kind::Contact(i, c.rsu));
                    }
                }
                let first = beacon_time(a.motion.entry_time, a.beacon_phase_s, config.beacon_period_s, 0);
                if first < a.motion.exit_time(road) {
                    queue.push(first, Kind::Beacon(i, 0));
                }
            }
            Kind::Contact(i, rsu) => {
                let a = &agents[i];
                let n = active_identities(a, pipeline.is_terminated(a.physical_id));
                let identities: Vec<IdentityLabel> = a.identities[..n].to_vec();
                let raw = rsus[rsu.0 as usize - 1].rsu_issue_tag(t, &mut streams.nonces);
                trace.emit(
                    t,
                    &TraceEvent::TagIssued {
                        rsu,
                        nonce: nonce_hex(&raw.nonce),
                        rsu_sig: raw.rsu_signature.clone(),
                        identities: identities.clone(),
                    },
                );
                let tag = ta.ta_authorize(&raw, &directory)?;
                trace.emit(
                    t,
                    &TraceEvent::TaAuthorized {
                        rsu,
                        nonce: nonce_hex(&tag.nonce),
                        ta_sig: tag.ta_countersignature.clone().expect("just countersigned"),
                    },
                );
                for ev in pipeline.on_tag(&tag, &identities)? {
                    trace.emit(t, &ev);
                }
            }
            Kind::Beacon(i, k) => {
                let a = &agents[i];
                let x = a.motion.position(t, road);
                for idx in 0..a.identities.len() {
                    if idx >= active_identities(a, pipeline.is_terminated(a.physical_id)) {
                        break;
                    }
                    let beacon = Beacon {
                        claimed_identity: a.identities[idx].clone(),
                        pseudonym: a.pseudonyms[idx].clone(),
                        timestamp: t,
                        position_m: x,
                        speed_kmh: a.motion.speed_kmh,
                    };
                    let mut heard_by = road.heard_by(x);
                    if config.packet_loss > 0.0 {
                        heard_by.retain(|_| streams.loss.gen::<f64>() >= config.packet_loss);
                    }
                    trace.emit(
                        t,
                        &TraceEvent::Beacon {
                            identity: beacon.claimed_identity.clone(),
                            pseudonym: beacon.pseudonym.clone(),
                            position_m: x,
                            speed_kmh: beacon.speed_kmh,
                            heard_by: heard_by.clone(),
                        },
                    );
                    for ev in pipeline.on_beacon(&beacon, &heard_by)? {
                        trace.emit(t, &ev);
                    }
                }
                let next = beacon_time(a.motion.entry_time, a.beacon_phase_s, config.beacon_period_s, k + 1);
                if next < a.motion.exit_time(road) {
                    queue.push(next, Kind::Beacon(i, k + 1));
                }
            }
        }
    }

    let metrics = pipeline.metrics()?;
    trace.emit(config.sim_time_s, &TraceEvent::Summary(metrics.clone()));
    debug_assert!(agents.iter().filter(|a| a.kind == AgentKind::Sybil).count() == metrics.attackers_total);
    Ok(RunOutput { trace: trace.finish(), metrics })
}
