//! JSON-lines run trace with a running SHA-256 chain.
//!
//! Each line is `{"seq":..,"t":..,"kind":..,...,"chain":"<hex>"}` where
//! `chain = SHA-256(previous chain || line without the chain field)` and the
//! first previous chain is 32 zero bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arrivals::AgentKind;
use super::road::Contact;
use super::Metrics;
use crate::crypto::{Pseudonym, Signature};
use crate::footprint::NONCE_LEN;
use crate::hybrid::{Detector, Evidence};
use crate::ids::{IdentityLabel, PhysicalId, RsuId, VehicleId};
use crate::p2dap::{Adjudication, SuspiciousReport};
use crate::scenario::ScenarioConfig;

const CHAIN_FIELD: &str = ",\"chain\":\"";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionOutcome {
    Counted,
    Duplicate,
    InactiveDetector,
    /// Evidence pointed at an honest vehicle. Never counted.
    FalseConviction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart {
        scenario_id: String,
        seed: u64,
        config: ScenarioConfig,
    },
    Announce {
        from: RsuId,
        to: RsuId,
    },
    /// Ground truth for the scoring layer. Detectors never read it.
    Vehicle {
        physical: PhysicalId,
        agent: AgentKind,
        lane: u32,
        entry_time: f64,
        speed_kmh: f64,
        beacon_phase_s: f64,
        exit_time: f64,
        pool_vehicle: VehicleId,
        identities: Vec<IdentityLabel>,
        pseudonyms: Vec<Pseudonym>,
        contacts: Vec<Contact>,
    },
    Beacon {
        identity: IdentityLabel,
        pseudonym: Pseudonym,
        position_m: f64,
        speed_kmh: f64,
        heard_by: Vec<RsuId>,
    },
    TagIssued {
        rsu: RsuId,
        nonce: String,
        rsu_sig: Signature,
        identities: Vec<IdentityLabel>,
    },
    TaAuthorized {
        rsu: RsuId,
        nonce: String,
        ta_sig: Signature,
    },
    Report(SuspiciousReport),
    Adjudication(Adjudication),
    ControllerDecision {
        avg_speed_kmh: f64,
        active: Detector,
    },
    Detection {
        detector: Detector,
        physical: PhysicalId,
        evidence: Evidence,
        outcome: DetectionOutcome,
    },
    AttackTerminated {
        physical: PhysicalId,
    },
    Summary(Metrics),
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::RunStart { .. } => "run_start",
            TraceEvent::Announce { .. } => "announce",
            TraceEvent::Vehicle { .. } => "vehicle",
            TraceEvent::Beacon { .. } => "beacon",
            TraceEvent::TagIssued { .. } => "tag_issued",
            TraceEvent::TaAuthorized { .. } => "ta_authorized",
            TraceEvent::Report(_) => "report",
            TraceEvent::Adjudication(_) => "adjudication",
            TraceEvent::ControllerDecision { .. } => "controller_decision",
            TraceEvent::Detection { .. } => "detection",
            TraceEvent::AttackTerminated { .. } => "attack_terminated",
            TraceEvent::Summary(_) => "summary",
        }
    }

    /// Events produced by detectors and scoring rather than by the world.
    pub fn is_derived(&self) -> bool {
        matches!(
            self,
            TraceEvent::Report(_)
                | TraceEvent::Adjudication(_)
                | TraceEvent::ControllerDecision { .. }
                | TraceEvent::Detection { .. }
                | TraceEvent::AttackTerminated { .. }
                | TraceEvent::Summary(_)
        )
    }
}

pub fn nonce_hex(nonce: &[u8; NONCE_LEN]) -> String {
    hex::encode(nonce)
}

#[derive(Serialize, Deserialize)]
struct Body<E> {
    seq: u64,
    t: f64,
    #[serde(flatten)]
    event: E,
}

pub struct TraceWriter {
    out: String,
    chain: [u8; 32],
    seq: u64,
}

impl Default for TraceWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceWriter {
    pub fn new() -> Self {
        TraceWriter { out: String::new(), chain: [0; 32], seq: 0 }
    }

    pub fn emit(&mut self, t: f64, event: &TraceEvent) {
        let body = serde_json::to_string(&Body { seq: self.seq, t, event }).expect("trace event serializes");
        self.chain = chain_step(&self.chain, body.as_bytes());
        self.out.push_str(&body[..body.len() - 1]);
        self.out.push_str(CHAIN_FIELD);
        self.out.push_str(&hex::encode(self.chain));
        self.out.push_str("\"}\n");
        self.seq += 1;
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub fn chain_step(prev: &[u8; 32], body: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(body);
    h.finalize().into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// 1-based line number in the trace file.
    pub line: usize,
    pub seq: u64,
    pub t: f64,
    pub event: TraceEvent,
    pub chain: [u8; 32],
    /// The line with the chain field removed, as hashed.
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Splits one line into its hashed body and recorded chain value.
pub fn split_chain(line: &str) -> Option<(String, [u8; 32])> {
    let pos = line.rfind(CHAIN_FIELD)?;
    let rest = line[pos + CHAIN_FIELD.len()..].strip_suffix("\"}")?;
    let chain: [u8; 32] = hex::decode(rest).ok()?.try_into().ok()?;
    let mut body = line[..pos].to_string();
    body.push('}');
    Some((body, chain))
}

pub fn parse_line(line_no: usize, line: &str) -> Result<TraceRecord, LineError> {
    let err = |message: String| LineError { line: line_no, message };
    let (body, chain) = split_chain(line).ok_or_else(|| err("missing or malformed chain field".into()))?;
    let parsed: Body<TraceEvent> = serde_json::from_str(&body).map_err(|e| err(e.to_string()))?;
    Ok(TraceRecord { line: line_no, seq: parsed.seq, t: parsed.t, event: parsed.event, chain, body })
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, LineError> {
    text.lines().enumerate().map(|(i, l)| parse_line(i + 1, l)).collect()
}
