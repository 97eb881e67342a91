//! Trace replay. Reruns the detectors over a trace's world inputs using pool
//! lookups in place of keyed hashing, and checks every derived event.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::ScenarioConfig;
use crate::footprint::{AcceptRecorded, LinkTag, NONCE_LEN};
use crate::ids::{IdentityLabel, PhysicalId, RsuId};
use crate::p2dap::{Beacon, P2dapError, PseudonymPool};
use crate::scenario::Mode;
use crate::sim::arrivals::AgentKind;
use crate::sim::pipeline::Pipeline;
use crate::sim::trace::{chain_step, split_chain, LineError, TraceEvent, TraceRecord};
use crate::sim::{beacon_time, coverage_contacts, recheck_time, Motion, SimError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("pool file: {0}")]
    Pool(#[from] P2dapError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceKind {
    /// Line is not a well-formed trace record.
    Parse,
    /// Hash chain does not continue.
    Chain,
    /// Sequence numbers or times out of order.
    Order,
    /// World input inconsistent with the scenario.
    Input,
    /// Derived event differs from the replay.
    Replay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    /// 1-based line; one past the end when the trace is truncated.
    pub line: usize,
    pub kind: DivergenceKind,
    pub message: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {:?}: {}", self.line, self.kind, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub lines: usize,
    pub derived_checked: usize,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn is_verified(&self) -> bool {
        self.divergence.is_none()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.divergence {
            None => {
                write!(f, "verified, 0 divergences ({} lines, {} derived events)", self.lines, self.derived_checked)
            }
            Some(d) => write!(f, "divergence at {d}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub check_chain: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { check_chain: true }
    }
}

pub fn verify_trace(trace_path: impl AsRef<Path>, pool_path: impl AsRef<Path>) -> Result<VerifyReport, VerifyError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|source| VerifyError::Io { path: p.display().to_string(), source })
    };
    let trace = read(trace_path.as_ref())?;
    let pool = PseudonymPool::from_json(&read(pool_path.as_ref())?)?;
    Ok(verify_trace_text(&trace, &pool, VerifyOptions::default()))
}

fn div(line: usize, kind: DivergenceKind, message: impl Into<String>) -> Divergence {
    Divergence { line, kind, message: message.into() }
}

/// Structural pass: chain, parse, sequence and time order. Returns the
/// records before the first structural divergence.
fn structural(text: &str, opts: VerifyOptions) -> (Vec<TraceRecord>, Option<Divergence>) {
    let mut records = Vec::new();
    let mut prev = [0u8; 32];
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let Some((body, chain)) = split_chain(line) else {
            return (records, Some(div(n, DivergenceKind::Parse, "missing or malformed chain field")));
        };
        if opts.check_chain && chain_step(&prev, body.as_bytes()) != chain {
            return (records, Some(div(n, DivergenceKind::Chain, "hash chain broken")));
        }
        prev = chain;
        let rec = match crate::sim::trace::parse_line(n, line) {
            Ok(r) => r,
            Err(LineError { line, message }) => return (records, Some(div(line, DivergenceKind::Parse, message))),
        };
        if rec.seq != i as u64 {
            return (records, Some(div(n, DivergenceKind::Order, format!("seq {} where {i} expected", rec.seq))));
        }
        if !rec.t.is_finite() || rec.t < last_t {
            return (records, Some(div(n, DivergenceKind::Order, format!("time {} after {last_t}", rec.t))));
        }
        last_t = rec.t;
        records.push(rec);
    }
    (records, None)
}

pub fn verify_trace_text(text: &str, pool: &PseudonymPool, opts: VerifyOptions) -> VerifyReport {
    let lines = text.lines().count();
    let (records, structural_div) = structural(text, opts);
    let mut derived_checked = 0;
    let replay_div = replay(&records, pool, &mut derived_checked, structural_div.is_none(), lines);
    let divergence = match (replay_div, structural_div) {
        (Some(r), Some(s)) => Some(if r.line <= s.line { r } else { s }),
        (r, s) => r.or(s),
    };
    VerifyReport { lines, derived_checked, divergence }
}

struct VehicleInfo {
    physical: PhysicalId,
    kind: AgentKind,
    motion: Motion,
    phase: f64,
    exit_time: f64,
    identities: Vec<IdentityLabel>,
    pseudonyms: Vec<crate::crypto::Pseudonym>,
    contacts: Vec<(RsuId, f64)>,
}

struct PendingTag {
    line: usize,
    rsu: RsuId,
    t: f64,
    nonce: String,
    rsu_sig: crate::crypto::Signature,
    identities: Vec<IdentityLabel>,
}

fn replay(
    records: &[TraceRecord],
    pool: &PseudonymPool,
    derived_checked: &mut usize,
    complete: bool,
    lines: usize,
) -> Option<Divergence> {
    use DivergenceKind::*;
    let first = records.first()?;
    let TraceEvent::RunStart { scenario_id, seed, config } = &first.event else {
        return Some(div(1, Input, "trace does not start with run_start"));
    };
    let config: &ScenarioConfig = config;
    if let Err(e) = config.validate() {
        return Some(div(1, Input, format!("recorded config invalid: {e}")));
    }
    if !pool.has_fine_view() {
        return Some(div(1, Input, "pool file has no fine-grained values"));
    }
    match config.pool.params() {
        Ok(p) if p == pool.params() => {}
        _ => return Some(div(1, Input, "pool widths differ from the recorded config")),
    }
    let verifier = AcceptRecorded;
    let mut pipeline = match Pipeline::new(config, scenario_id, *seed, pool, pool, &verifier, pool) {
        Ok(p) => p,
        Err(e) => return Some(div(1, Input, e.to_string())),
    };
    let road = &config.road;
    let mut expected: VecDeque<(f64, TraceEvent)> = VecDeque::new();
    let mut vehicles: HashMap<PhysicalId, VehicleInfo> = HashMap::new();
    let mut owner: HashMap<IdentityLabel, (PhysicalId, usize)> = HashMap::new();
    let mut beacon_k: HashMap<IdentityLabel, u64> = HashMap::new();
    let mut pending: Option<PendingTag> = None;
    let mut next_recheck: u64 = 0;
    let hybrid = config.mode == Mode::Hybrid;
    let mut summary_line = None;

    let extend =
        |expected: &mut VecDeque<(f64, TraceEvent)>, line: usize, t: f64, r: Result<Vec<TraceEvent>, SimError>| match r
        {
            Ok(evs) => {
                expected.extend(evs.into_iter().map(|e| (t, e)));
                None
            }
            Err(e) => Some(div(line, Replay, format!("replay failed: {e}"))),
        };

    for rec in &records[1..] {
        let n = rec.line;
        if let Some(s) = summary_line {
            return Some(div(n, Order, format!("record after summary on line {s}")));
        }
        if let Some(p) = &pending {
            if !matches!(rec.event, TraceEvent::TaAuthorized { .. }) {
                return Some(div(n, Input, format!("tag issued on line {} was never authorized", p.line)));
            }
        }
        let is_decision = matches!(rec.event, TraceEvent::ControllerDecision { .. });
        if hybrid && !is_decision {
            let due = recheck_time(config.recheck_period_s, next_recheck);
            if due < config.sim_time_s && rec.t > due {
                return Some(div(n, Replay, format!("missing controller decision at t={due}")));
            }
        }
        if rec.event.is_derived() && !is_decision && !matches!(rec.event, TraceEvent::Summary(_)) {
            *derived_checked += 1;
            match expected.pop_front() {
                Some((t, e)) if e == rec.event && t == rec.t => continue,
                Some((t, e)) if e == rec.event => {
                    return Some(div(n, Replay, format!("{} event at {} where {t} expected", e.kind(), rec.t)))
                }
                Some((_, e)) => {
                    return Some(div(n, Replay, format!("expected {} event {:?}, found {:?}", e.kind(), e, rec.event)))
                }
                None => return Some(div(n, Replay, format!("unexpected {} event", rec.event.kind()))),
            }
        }
        if let Some((_, e)) = expected.front() {
            return Some(div(n, Replay, format!("missing {} event {:?} before this line", e.kind(), e)));
        }
        match &rec.event {
            TraceEvent::RunStart { .. } => return Some(div(n, Order, "second run_start")),
            TraceEvent::Announce { from, to } => {
                let known = |r: &RsuId| road.rsu_ids().any(|x| x == *r);
                if !known(from) || !known(to) {
                    return Some(div(n, Input, "announcement between unknown RSUs"));
                }
            }
            TraceEvent::Vehicle {
                physical,
                agent,
                lane,
                entry_time,
                speed_kmh,
                beacon_phase_s,
                exit_time,
                pool_vehicle,
                identities,
                pseudonyms,
                contacts,
                ..
            } => {
                let motion = Motion { entry_time: *entry_time, speed_kmh: *speed_kmh };
                if rec.t != *entry_time || vehicles.contains_key(physical) || *lane >= road.lanes {
                    return Some(div(n, Input, "vehicle record out of place"));
                }
                if motion.exit_time(road) != *exit_time || coverage_contacts(road, &motion) != *contacts {
                    return Some(div(n, Input, "vehicle geometry inconsistent with the road"));
                }
                let want_ids = match agent {
                    AgentKind::Honest => 1,
                    AgentKind::Sybil => 1 + config.forged_count,
                };
                let entry = pool.vehicle(*pool_vehicle);
                let owned =
                    entry.is_some_and(|v| v.pseudonyms.len() >= want_ids && v.pseudonyms[..want_ids] == pseudonyms[..]);
                if identities.len() != want_ids || !owned {
                    return Some(div(n, Input, "vehicle identities or pseudonyms do not match the pool"));
                }
                for (i, id) in identities.iter().enumerate() {
                    if owner.insert(id.clone(), (*physical, i)).is_some() {
                        return Some(div(n, Input, format!("identity {id} claimed twice")));
                    }
                }
                pipeline.register_vehicle(*physical, *agent, *pool_vehicle, identities);
                vehicles.insert(
                    *physical,
                    VehicleInfo {
                        physical: *physical,
                        kind: *agent,
                        motion,
                        phase: *beacon_phase_s,
                        exit_time: *exit_time,
                        identities: identities.clone(),
                        pseudonyms: pseudonyms.clone(),
                        contacts: contacts.iter().map(|c| (c.rsu, c.t)).collect(),
                    },
                );
            }
            TraceEvent::Beacon { identity, pseudonym, position_m, speed_kmh, heard_by } => {
                let Some(&(physical, idx)) = owner.get(identity) else {
                    return Some(div(n, Input, format!("beacon from unknown identity {identity}")));
                };
                let v = &vehicles[&physical];
                let k = beacon_k.entry(identity.clone()).or_insert(0);
                let due = beacon_time(v.motion.entry_time, v.phase, config.beacon_period_s, *k);
                *k += 1;
                if rec.t != due || rec.t >= v.exit_time || rec.t >= config.sim_time_s {
                    return Some(div(n, Input, format!("beacon at {} where {due} expected", rec.t)));
                }
                if v.pseudonyms[idx] != *pseudonym {
                    return Some(div(n, Input, "beacon pseudonym differs from the identity's pool entry"));
                }
                let x = v.motion.position(rec.t, road);
                if x != *position_m || v.motion.speed_kmh != *speed_kmh {
                    return Some(div(n, Input, "beacon position or speed inconsistent with the vehicle"));
                }
                let audible = road.heard_by(x);
                let ok = if config.packet_loss > 0.0 {
                    heard_by.iter().all(|r| audible.contains(r))
                } else {
                    *heard_by == audible
                };
                if !ok {
                    return Some(div(n, Input, "heard_by inconsistent with coverage"));
                }
                if idx > 0 && pipeline.is_terminated(physical) {
                    return Some(div(n, Input, format!("forged identity {identity} beaconed after termination")));
                }
                if v.kind == AgentKind::Honest && idx > 0 {
                    return Some(div(n, Input, "honest vehicle with several identities"));
                }
                let beacon = Beacon {
                    claimed_identity: identity.clone(),
                    pseudonym: pseudonym.clone(),
                    timestamp: rec.t,
                    position_m: *position_m,
                    speed_kmh: *speed_kmh,
                };
                if let Some(d) = extend(&mut expected, n, rec.t, pipeline.on_beacon(&beacon, heard_by)) {
                    return Some(d);
                }
            }
            TraceEvent::TagIssued { rsu, nonce, rsu_sig, identities } => {
                if !config.mode.runs_footprint() {
                    return Some(div(n, Input, "tag issued in a mode without footprint"));
                }
                let Some(&(physical, _)) = identities.first().and_then(|i| owner.get(i)) else {
                    return Some(div(n, Input, "tag for unknown identities"));
                };
                let v = &vehicles[&physical];
                let active = if pipeline.is_terminated(physical) { 1 } else { v.identities.len() };
                if identities[..] != v.identities[..active] {
                    return Some(div(n, Input, "tag recipients differ from the vehicle's active identities"));
                }
                if !v.contacts.iter().any(|&(r, t)| r == *rsu && t == rec.t) {
                    return Some(div(
                        n,
                        Input,
                        format!("vehicle {} has no contact with {rsu} at {}", v.physical, rec.t),
                    ));
                }
                pending = Some(PendingTag {
                    line: n,
                    rsu: *rsu,
                    t: rec.t,
                    nonce: nonce.clone(),
                    rsu_sig: rsu_sig.clone(),
                    identities: identities.clone(),
                });
            }
            TraceEvent::TaAuthorized { rsu, nonce, ta_sig } => {
                let Some(p) = pending.take() else {
                    return Some(div(n, Input, "authorization without an issued tag"));
                };
                if p.rsu != *rsu || p.nonce != *nonce || p.t != rec.t {
                    return Some(div(n, Input, "authorization does not match the issued tag"));
                }
                let nonce_bytes: Option<[u8; NONCE_LEN]> = hex::decode(nonce).ok().and_then(|b| b.try_into().ok());
                let Some(nonce_bytes) = nonce_bytes else {
                    return Some(div(n, Input, "malformed nonce"));
                };
                let tag = LinkTag {
                    rsu_id: *rsu,
                    issue_time: rec.t,
                    nonce: nonce_bytes,
                    rsu_signature: p.rsu_sig,
                    ta_countersignature: Some(ta_sig.clone()),
                };
                if let Some(d) = extend(&mut expected, n, rec.t, pipeline.on_tag(&tag, &p.identities)) {
                    return Some(d);
                }
            }
            TraceEvent::ControllerDecision { .. } => {
                let due = recheck_time(config.recheck_period_s, next_recheck);
                if !hybrid || rec.t != due {
                    return Some(div(n, Replay, format!("controller decision at {} where none is due", rec.t)));
                }
                next_recheck += 1;
                *derived_checked += 1;
                let want = pipeline.on_recheck(rec.t).expect("hybrid has a controller");
                if want != rec.event {
                    return Some(div(n, Replay, format!("expected {want:?}, found {:?}", rec.event)));
                }
            }
            TraceEvent::Summary(m) => {
                *derived_checked += 1;
                if rec.t != config.sim_time_s {
                    return Some(div(n, Replay, "summary before the end of the run"));
                }
                match pipeline.metrics() {
                    Ok(want) if want == *m => {}
                    Ok(want) => return Some(div(n, Replay, format!("expected summary {want:?}, found {m:?}"))),
                    Err(e) => return Some(div(n, Replay, e.to_string())),
                }
                summary_line = Some(n);
            }
            TraceEvent::Report(_)
            | TraceEvent::Adjudication(_)
            | TraceEvent::Detection { .. }
            | TraceEvent::AttackTerminated { .. } => unreachable!("handled above"),
        }
    }
    if !complete {
        return None;
    }
    if let Some((_, e)) = expected.front() {
        return Some(div(lines + 1, Replay, format!("trace ends before {} event {e:?}", e.kind())));
    }
    if pending.is_some() {
        return Some(div(lines + 1, Input, "trace ends with an unauthorized tag"));
    }
    if summary_line.is_none() {
        return Some(div(lines + 1, Replay, "trace ends without a summary"));
    }
    None
}
