//! Link-tag trajectories and duplicate-series detection.
//!
//! Every RSU hands one signed, TA-countersigned tag to each physical vehicle
//! entering its coverage. Identities that carry byte-identical trailing tag
//! series were produced by the same transceiver.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoError, KeyDirectory, Signature, SignatureKeyPair, SignerId};
use crate::ids::{IdentityLabel, RsuId};

pub const NONCE_LEN: usize = 8;
pub const TA_SIGNER: &str = "ta";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FootprintError {
    #[error("TA rejected tag from {rsu}: RSU signature does not verify")]
    AuthorizationRejected { rsu: RsuId },
    #[error("unknown signer {0}")]
    UnknownSigner(String),
    #[error("serial order violated for {identity}: tag at {got} after {last}")]
    SerialOrder { identity: IdentityLabel, last: f64, got: f64 },
    #[error("invalid tag from {rsu}: {reason}")]
    InvalidTag { rsu: RsuId, reason: &'static str },
    #[error("RSU {0} is not in the directory")]
    UnknownRsu(RsuId),
}

impl From<CryptoError> for FootprintError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::UnknownSigner(s) => FootprintError::UnknownSigner(s),
            other => FootprintError::UnknownSigner(other.to_string()),
        }
    }
}

fn ta_signer() -> SignerId {
    SignerId::new(TA_SIGNER)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkTag {
    pub rsu_id: RsuId,
    pub issue_time: f64,
    #[serde(with = "hex_nonce")]
    pub nonce: [u8; NONCE_LEN],
    pub rsu_signature: Signature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ta_countersignature: Option<Signature>,
}

mod hex_nonce {
    use super::NONCE_LEN;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &[u8; NONCE_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; NONCE_LEN], D::Error> {
        let bytes = hex::decode(String::deserialize(d)?).map_err(D::Error::custom)?;
        bytes.try_into().map_err(|_| D::Error::custom("nonce must be 8 bytes"))
    }
}

impl LinkTag {
    /// Bytes covered by the RSU signature.
    pub fn signed_message(rsu_id: RsuId, issue_time: f64, nonce: &[u8; NONCE_LEN]) -> Vec<u8> {
        let mut m = Vec::with_capacity(7 + 2 + 8 + NONCE_LEN);
        m.extend_from_slice(b"linktag");
        m.extend_from_slice(&rsu_id.0.to_be_bytes());
        m.extend_from_slice(&issue_time.to_bits().to_be_bytes());
        m.extend_from_slice(nonce);
        m
    }

    pub fn message(&self) -> Vec<u8> {
        Self::signed_message(self.rsu_id, self.issue_time, &self.nonce)
    }

    /// Bytes covered by the TA countersignature: the tag body plus the RSU signature.
    pub fn countersigned_message(&self) -> Vec<u8> {
        let mut m = self.message();
        m.extend_from_slice(self.rsu_signature.as_bytes());
        m
    }

    /// Canonical bytes used for series comparison.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut m = self.countersigned_message();
        if let Some(ta) = &self.ta_countersignature {
            m.extend_from_slice(ta.as_bytes());
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub from: RsuId,
    pub template: LinkTag,
}

#[derive(Clone, Debug)]
pub struct RsuState {
    id: RsuId,
    keypair: SignatureKeyPair,
    received: BTreeMap<RsuId, Announcement>,
}

impl RsuState {
    pub fn new(id: RsuId, keypair: SignatureKeyPair) -> Self {
        RsuState { id, keypair, received: BTreeMap::new() }
    }

    pub fn generate<R: RngCore>(id: RsuId, rng: &mut R) -> Self {
        Self::new(id, SignatureKeyPair::generate(id.signer(), rng))
    }

    pub fn id(&self) -> RsuId {
        self.id
    }

    pub fn keypair(&self) -> &SignatureKeyPair {
        &self.keypair
    }

    /// One tag for one physical contact. The nonce comes from the caller's stream.
    pub fn rsu_issue_tag<R: RngCore>(&self, now: f64, rng: &mut R) -> LinkTag {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        self.issue_with_nonce(now, nonce)
    }

    pub fn issue_with_nonce(&self, now: f64, nonce: [u8; NONCE_LEN]) -> LinkTag {
        let rsu_signature = self.keypair.sign(&LinkTag::signed_message(self.id, now, &nonce));
        LinkTag { rsu_id: self.id, issue_time: now, nonce, rsu_signature, ta_countersignature: None }
    }

    pub fn receive(&mut self, announcement: Announcement, directory: &RsuDirectory) -> Result<(), FootprintError> {
        directory.verify_rsu_signature(&announcement.template)?;
        self.received.insert(announcement.from, announcement);
        Ok(())
    }

    pub fn announcements(&self) -> &BTreeMap<RsuId, Announcement> {
        &self.received
    }
}

#[derive(Clone, Debug)]
pub struct TrustAuthority {
    keypair: SignatureKeyPair,
}

impl TrustAuthority {
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        TrustAuthority { keypair: SignatureKeyPair::generate(ta_signer(), rng) }
    }

    pub fn keypair(&self) -> &SignatureKeyPair {
        &self.keypair
    }

    pub fn ta_authorize(&self, tag: &LinkTag, directory: &RsuDirectory) -> Result<LinkTag, FootprintError> {
        let signer = tag.rsu_id.signer();
        if !directory.registry.verify(&signer, &tag.message(), &tag.rsu_signature)? {
            return Err(FootprintError::AuthorizationRejected { rsu: tag.rsu_id });
        }
        let mut out = tag.clone();
        out.ta_countersignature = Some(self.keypair.sign(&tag.countersigned_message()));
        Ok(out)
    }
}

/// Neighbor relation and public signer registry, including the TA.
#[derive(Clone, Debug, Default)]
pub struct RsuDirectory {
    neighbors: BTreeMap<RsuId, BTreeSet<RsuId>>,
    registry: KeyDirectory,
}

impl RsuDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_rsu(&mut self, rsu: &RsuState) {
        self.neighbors.entry(rsu.id()).or_default();
        self.registry.register(rsu.keypair());
    }

    pub fn register_ta(&mut self, ta: &TrustAuthority) {
        self.registry.register(ta.keypair());
    }

    pub fn link(&mut self, a: RsuId, b: RsuId) -> Result<(), FootprintError> {
        for id in [a, b] {
            if !self.neighbors.contains_key(&id) {
                return Err(FootprintError::UnknownRsu(id));
            }
        }
        if a != b {
            self.neighbors.get_mut(&a).expect("checked").insert(b);
            self.neighbors.get_mut(&b).expect("checked").insert(a);
        }
        Ok(())
    }

    /// Links RSUs ordered by road position into a chain.
    pub fn link_chain(&mut self, ordered: &[RsuId]) -> Result<(), FootprintError> {
        for w in ordered.windows(2) {
            self.link(w[0], w[1])?;
        }
        Ok(())
    }

    pub fn neighbors(&self, id: RsuId) -> impl Iterator<Item = RsuId> + '_ {
        self.neighbors.get(&id).into_iter().flatten().copied()
    }

    pub fn rsus(&self) -> impl Iterator<Item = RsuId> + '_ {
        self.neighbors.keys().copied()
    }

    fn verify_rsu_signature(&self, tag: &LinkTag) -> Result<(), FootprintError> {
        if !self.registry.verify(&tag.rsu_id.signer(), &tag.message(), &tag.rsu_signature)? {
            return Err(FootprintError::InvalidTag { rsu: tag.rsu_id, reason: "RSU signature" });
        }
        Ok(())
    }
}

pub trait TagVerifier {
    fn verify_tag(&self, tag: &LinkTag) -> Result<(), FootprintError>;
}

impl TagVerifier for RsuDirectory {
    fn verify_tag(&self, tag: &LinkTag) -> Result<(), FootprintError> {
        self.verify_rsu_signature(tag)?;
        if let Some(ta) = &tag.ta_countersignature {
            if !self.registry.verify(&ta_signer(), &tag.countersigned_message(), ta)? {
                return Err(FootprintError::InvalidTag { rsu: tag.rsu_id, reason: "TA countersignature" });
            }
        }
        Ok(())
    }
}

/// Accepts tags as recorded. Used when replaying a trace without RSU secrets.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptRecorded;

impl TagVerifier for AcceptRecorded {
    fn verify_tag(&self, _tag: &LinkTag) -> Result<(), FootprintError> {
        Ok(())
    }
}

/// Each RSU announces its signed template to its neighbors.
pub fn broadcast_tags(rsu: &RsuState, directory: &RsuDirectory, now: f64) -> Vec<(RsuId, Announcement)> {
    let template = rsu.issue_with_nonce(now, [0; NONCE_LEN]);
    directory.neighbors(rsu.id()).map(|n| (n, Announcement { from: rsu.id(), template: template.clone() })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub identity: IdentityLabel,
    pub tags: Vec<LinkTag>,
}

#[derive(Serialize)]
struct TagRecord<'a> {
    identity: &'a IdentityLabel,
    rsu_id: RsuId,
    issue_time: f64,
    nonce: String,
    sig: String,
    ta_sig: String,
}

impl Trajectory {
    pub fn new(identity: IdentityLabel) -> Self {
        Trajectory { identity, tags: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn append_tag<V: TagVerifier>(&mut self, tag: LinkTag, verifier: &V) -> Result<(), FootprintError> {
        verifier.verify_tag(&tag)?;
        if let Some(last) = self.tags.last() {
            if tag.issue_time.partial_cmp(&last.issue_time) != Some(std::cmp::Ordering::Greater) {
                return Err(FootprintError::SerialOrder {
                    identity: self.identity.clone(),
                    last: last.issue_time,
                    got: tag.issue_time,
                });
            }
        }
        self.tags.push(tag);
        Ok(())
    }

    /// Concatenated canonical bytes of the last `l` tags, if there are that many.
    pub fn suffix_key(&self, l: usize) -> Option<Vec<u8>> {
        if l == 0 || self.tags.len() < l {
            return None;
        }
        let mut key = Vec::new();
        for tag in &self.tags[self.tags.len() - l..] {
            let bytes = tag.canonical_bytes();
            key.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            key.extend_from_slice(&bytes);
        }
        Some(key)
    }

    /// One JSON object per tag.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tags {
            let rec = TagRecord {
                identity: &self.identity,
                rsu_id: t.rsu_id,
                issue_time: t.issue_time,
                nonce: hex::encode(t.nonce),
                sig: hex::encode(t.rsu_signature.as_bytes()),
                ta_sig: t.ta_countersignature.as_ref().map(|s| hex::encode(s.as_bytes())).unwrap_or_default(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("tag record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Groups identities whose trailing `l` tags are byte-identical. Only groups
/// of two or more are returned, each sorted, in order of their first member.
pub fn detect_duplicate_series<'a, I>(claims: I, l: usize) -> Vec<Vec<IdentityLabel>>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut by_key: HashMap<Vec<u8>, BTreeSet<IdentityLabel>> = HashMap::new();
    for t in claims {
        if let Some(key) = t.suffix_key(l) {
            by_key.entry(key).or_default().insert(t.identity.clone());
        }
    }
    let mut groups: Vec<Vec<IdentityLabel>> =
        by_key.into_values().filter(|g| g.len() >= 2).map(|g| g.into_iter().collect()).collect();
    groups.sort();
    groups
}

/// Incremental form of [`detect_duplicate_series`] keyed on the current suffix
/// of every identity.
#[derive(Clone, Debug)]
pub struct SeriesIndex {
    l: usize,
    key_of: HashMap<IdentityLabel, Vec<u8>>,
    members: HashMap<Vec<u8>, BTreeSet<IdentityLabel>>,
}

impl SeriesIndex {
    pub fn new(l: usize) -> Self {
        SeriesIndex { l, key_of: HashMap::new(), members: HashMap::new() }
    }

    /// Re-indexes `trajectory` and returns its current group, if it has at least two members.
    pub fn update(&mut self, trajectory: &Trajectory) -> Option<Vec<IdentityLabel>> {
        if let Some(old) = self.key_of.remove(&trajectory.identity) {
            if let Some(set) = self.members.get_mut(&old) {
                set.remove(&trajectory.identity);
                if set.is_empty() {
                    self.members.remove(&old);
                }
            }
        }
        let key = trajectory.suffix_key(self.l)?;
        let set = self.members.entry(key.clone()).or_default();
        set.insert(trajectory.identity.clone());
        self.key_of.insert(trajectory.identity.clone(), key);
        (set.len() >= 2).then(|| set.iter().cloned().collect())
    }

    /// Current group of `identity`, if it has at least two members.
    pub fn group_of(&self, identity: &IdentityLabel) -> Option<Vec<IdentityLabel>> {
        let set = self.members.get(self.key_of.get(identity)?)?;
        (set.len() >= 2).then(|| set.iter().cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct World {
        rsus: Vec<RsuState>,
        ta: TrustAuthority,
        dir: RsuDirectory,
        rng: ChaCha8Rng,
    }

    fn world() -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rsus: Vec<RsuState> = (1..=4).map(|i| RsuState::generate(RsuId(i), &mut rng)).collect();
        let ta = TrustAuthority::generate(&mut rng);
        let mut dir = RsuDirectory::new();
        for r in &rsus {
            dir.register_rsu(r);
        }
        dir.register_ta(&ta);
        dir.link_chain(&[RsuId(1), RsuId(2), RsuId(3), RsuId(4)]).unwrap();
        World { rsus, ta, dir, rng }
    }

    impl World {
        fn tag(&mut self, rsu: usize, t: f64) -> LinkTag {
            let raw = self.rsus[rsu].rsu_issue_tag(t, &mut self.rng);
            self.ta.ta_authorize(&raw, &self.dir).unwrap()
        }
    }

    #[test]
    fn honest_pass_builds_serial_trajectory() {
        let mut w = world();
        let mut traj = Trajectory::new(IdentityLabel::new("a"));
        for (i, t) in [0.0, 6.75, 20.25, 33.75].into_iter().enumerate() {
            let tag = w.tag(i, t);
            traj.append_tag(tag, &w.dir).unwrap();
        }
        assert_eq!(traj.len(), 4);
        assert!(traj.tags.windows(2).all(|p| p[0].issue_time < p[1].issue_time));
    }

    #[test]
    fn equal_time_is_serial_order_violation() {
        let mut w = world();
        let mut traj = Trajectory::new(IdentityLabel::new("a"));
        let (a, b) = (w.tag(0, 3.0), w.tag(1, 3.0));
        traj.append_tag(a, &w.dir).unwrap();
        assert!(matches!(traj.append_tag(b, &w.dir), Err(FootprintError::SerialOrder { .. })));
    }

    #[test]
    fn authorization_checks_rsu_signature() {
        let mut w = world();
        let mut raw = w.rsus[0].rsu_issue_tag(1.0, &mut w.rng);
        let ok = w.ta.ta_authorize(&raw, &w.dir).unwrap();
        w.dir.verify_tag(&ok).unwrap();

        raw.nonce[3] ^= 0x10;
        assert_eq!(w.ta.ta_authorize(&raw, &w.dir), Err(FootprintError::AuthorizationRejected { rsu: RsuId(1) }));

        let mut stranger_rng = ChaCha8Rng::seed_from_u64(5);
        let stranger = RsuState::generate(RsuId(9), &mut stranger_rng).rsu_issue_tag(1.0, &mut stranger_rng);
        assert_eq!(w.ta.ta_authorize(&stranger, &w.dir), Err(FootprintError::UnknownSigner("rsu-9".into())));
    }

    #[test]
    fn minted_tag_never_accepted() {
        let mut w = world();
        let mut forged = w.tag(0, 2.0);
        forged.rsu_signature = Signature::from_bytes(vec![0xAB; 32]);
        let mut traj = Trajectory::new(IdentityLabel::new("x"));
        assert!(matches!(traj.append_tag(forged, &w.dir), Err(FootprintError::InvalidTag { .. })));

        let mut bad_ta = w.tag(1, 3.0);
        bad_ta.ta_countersignature = Some(Signature::from_bytes(vec![1; 32]));
        assert!(matches!(traj.append_tag(bad_ta, &w.dir), Err(FootprintError::InvalidTag { .. })));
        assert!(traj.is_empty());
    }

    #[test]
    fn broadcast_reaches_chain_neighbors() {
        let w = world();
        let to: Vec<RsuId> = broadcast_tags(&w.rsus[1], &w.dir, 0.0).into_iter().map(|(n, _)| n).collect();
        assert_eq!(to, vec![RsuId(1), RsuId(3)]);
        let ends: Vec<RsuId> = broadcast_tags(&w.rsus[3], &w.dir, 0.0).into_iter().map(|(n, _)| n).collect();
        assert_eq!(ends, vec![RsuId(3)]);
    }

    #[test]
    fn shared_tags_flag_sybil_identities() {
        let mut w = world();
        let mut a = Trajectory::new(IdentityLabel::new("a"));
        let mut b = Trajectory::new(IdentityLabel::new("b"));
        let mut honest = Trajectory::new(IdentityLabel::new("h"));
        for (i, t) in [(0, 1.0), (1, 8.0)] {
            let tag = w.tag(i, t);
            a.append_tag(tag.clone(), &w.dir).unwrap();
            b.append_tag(tag, &w.dir).unwrap();
            // same RSU, same instant, own contact
            honest.append_tag(w.tag(i, t), &w.dir).unwrap();
        }
        let groups = detect_duplicate_series([&a, &b, &honest], 2);
        assert_eq!(groups, vec![vec![IdentityLabel::new("a"), IdentityLabel::new("b")]]);
        assert!(detect_duplicate_series([&a, &b], 3).is_empty());
    }

    #[test]
    fn index_tracks_latest_suffix() {
        let mut w = world();
        let mut a = Trajectory::new(IdentityLabel::new("a"));
        let mut b = Trajectory::new(IdentityLabel::new("b"));
        let mut idx = SeriesIndex::new(2);
        let t0 = w.tag(0, 0.0);
        a.append_tag(t0.clone(), &w.dir).unwrap();
        b.append_tag(t0, &w.dir).unwrap();
        assert!(idx.update(&a).is_none());
        assert!(idx.update(&b).is_none());
        let t1 = w.tag(1, 5.0);
        a.append_tag(t1.clone(), &w.dir).unwrap();
        assert!(idx.update(&a).is_none());
        b.append_tag(t1, &w.dir).unwrap();
        assert_eq!(idx.update(&b).unwrap().len(), 2);
        // a moves on alone
        a.append_tag(w.tag(2, 9.0), &w.dir).unwrap();
        assert!(idx.update(&a).is_none());
    }

    #[test]
    fn trajectory_jsonl_has_one_line_per_tag() {
        let mut w = world();
        let mut a = Trajectory::new(IdentityLabel::new("a"));
        a.append_tag(w.tag(0, 0.5), &w.dir).unwrap();
        a.append_tag(w.tag(1, 1.5), &w.dir).unwrap();
        let text = a.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["rsu_id"], 1);
        assert_eq!(first["nonce"].as_str().unwrap().len(), 16);
        assert_eq!(first["ta_sig"].as_str().unwrap().len(), 64);
    }
}
