//! DMV pseudonym pool: generation, invariants and JSON export.
//!
//! Generation draws random candidate pseudonyms, computes each candidate's
//! `(coarse, fine)` bucket, and hands the first `n_vehicles` buckets to reach
//! `per_vehicle` members to vehicles in completion order. Candidates are
//! hashed in parallel batches but counted sequentially in draw order, so the
//! result is independent of the thread count.

use std::collections::{BTreeSet, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::P2dapError;
use crate::crypto::{extract_bits, BlockHasher, CoarseValue, DmvKeys, FineValue, HashParams, Pseudonym, DIGEST_LEN};
use crate::ids::VehicleId;

pub const MIN_PSEUDONYM_LEN: usize = 8;
const BATCH: usize = 1 << 16;
/// Above this many buckets the per-bucket counters move to a hash map.
const DENSE_BUCKET_BITS: u32 = 26;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolRequest {
    pub n_vehicles: usize,
    pub per_vehicle: usize,
    pub pseudonym_len: usize,
    pub year: u32,
    pub seed: u64,
    /// Maximum number of candidate draws; `None` uses [`PoolRequest::default_budget`].
    pub draw_budget: Option<u64>,
}

impl PoolRequest {
    pub fn new(n_vehicles: usize, per_vehicle: usize, seed: u64) -> Self {
        PoolRequest {
            n_vehicles,
            per_vehicle,
            pseudonym_len: crate::crypto::DEFAULT_PSEUDONYM_LEN,
            year: 2024,
            seed,
            draw_budget: None,
        }
    }

    /// `1000 * n * k`, raised to four times the bucket count when that is
    /// larger. Filling `n` buckets of `k` out of `2^(w_c + w_f)` needs on the
    /// order of one draw per bucket.
    pub fn default_budget(&self, params: &HashParams) -> u64 {
        let buckets = 1u64 << (params.w_c() + params.w_f()).min(40);
        (1000 * self.n_vehicles as u64 * self.per_vehicle as u64).max(4 * buckets)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolVehicle {
    pub vehicle_id: VehicleId,
    pub pseudonyms: Vec<Pseudonym>,
    pub coarse: CoarseValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<FineValue>,
}

#[derive(Serialize, Deserialize)]
struct PoolDocument {
    year: u32,
    w_c: u32,
    w_f: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coarse_offset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine_offset: Option<u32>,
    vehicles: Vec<PoolVehicle>,
}

/// Yearly pool. Every vehicle owns one fine-grained group.
#[derive(Clone, Debug)]
pub struct PseudonymPool {
    year: u32,
    params: HashParams,
    vehicles: Vec<PoolVehicle>,
    owner: HashMap<Pseudonym, usize>,
}

impl PartialEq for PseudonymPool {
    fn eq(&self, other: &Self) -> bool {
        self.year == other.year && self.params == other.params && self.vehicles == other.vehicles
    }
}

impl PseudonymPool {
    pub fn from_vehicles(year: u32, params: HashParams, vehicles: Vec<PoolVehicle>) -> Result<Self, P2dapError> {
        let mut owner = HashMap::new();
        let mut width = None;
        let mut pairs = BTreeSet::new();
        for (idx, v) in vehicles.iter().enumerate() {
            if v.vehicle_id.0 as usize != idx {
                return Err(P2dapError::InvalidPool(format!("vehicle at index {idx} has id {}", v.vehicle_id.0)));
            }
            if v.pseudonyms.is_empty() {
                return Err(P2dapError::InvalidPool(format!("vehicle {idx} has no pseudonyms")));
            }
            if let Some(fine) = v.fine {
                if !pairs.insert((v.coarse, fine)) {
                    return Err(P2dapError::InvalidPool(format!(
                        "vehicle {idx} shares its fine group with another vehicle"
                    )));
                }
            }
            for p in &v.pseudonyms {
                let w = *width.get_or_insert(p.len());
                if p.len() != w {
                    return Err(P2dapError::InvalidPool("mixed pseudonym widths".into()));
                }
                if owner.insert(p.clone(), idx).is_some() {
                    return Err(P2dapError::InvalidPool(format!("pseudonym {p} assigned twice")));
                }
            }
        }
        Ok(PseudonymPool { year, params, vehicles, owner })
    }

    pub fn year(&self) -> u32 {
        self.year
    }

    pub fn params(&self) -> HashParams {
        self.params
    }

    pub fn vehicles(&self) -> &[PoolVehicle] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&PoolVehicle> {
        self.vehicles.get(id.0 as usize)
    }

    pub fn pseudonym_len(&self) -> Option<usize> {
        self.vehicles.first().map(|v| v.pseudonyms[0].len())
    }

    pub fn owner_of(&self, p: &Pseudonym) -> Option<VehicleId> {
        self.owner.get(p).map(|&i| self.vehicles[i].vehicle_id)
    }

    pub fn coarse_of(&self, p: &Pseudonym) -> Option<CoarseValue> {
        self.owner.get(p).map(|&i| self.vehicles[i].coarse)
    }

    /// `None` for unknown pseudonyms and for RSB-tier pools.
    pub fn fine_of(&self, p: &Pseudonym) -> Option<FineValue> {
        self.owner.get(p).and_then(|&i| self.vehicles[i].fine)
    }

    pub fn has_fine_view(&self) -> bool {
        self.vehicles.iter().all(|v| v.fine.is_some())
    }

    /// Copy with fine values stripped, as handed to RSBs.
    pub fn rsb_view(&self) -> PseudonymPool {
        let mut view = self.clone();
        for v in &mut view.vehicles {
            v.fine = None;
        }
        view
    }

    /// Rehashes every pseudonym and checks the stored projections.
    pub fn check_against(&self, keys: &DmvKeys) -> Result<(), P2dapError> {
        for v in &self.vehicles {
            for p in &v.pseudonyms {
                let (c, f) = keys.classify(p);
                if c != v.coarse || v.fine.is_some_and(|stored| stored != f) {
                    return Err(P2dapError::InvalidPool(format!(
                        "pseudonym {p} of vehicle {} hashes to ({}, {}), stored ({}, {:?})",
                        v.vehicle_id.0, c.0, f.0, v.coarse.0, v.fine
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = PoolDocument {
            year: self.year,
            w_c: self.params.w_c(),
            w_f: self.params.w_f(),
            coarse_offset: (!self.params.is_default_layout()).then_some(self.params.coarse.offset),
            fine_offset: (!self.params.is_default_layout()).then_some(self.params.fine.offset),
            vehicles: self.vehicles.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("pool serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, P2dapError> {
        let doc: PoolDocument = serde_json::from_str(text).map_err(|e| P2dapError::InvalidPool(e.to_string()))?;
        let mut params =
            HashParams::with_widths(doc.w_c, doc.w_f).map_err(|e| P2dapError::InvalidPool(e.to_string()))?;
        if let Some(off) = doc.coarse_offset {
            params.coarse.offset = off;
        }
        if let Some(off) = doc.fine_offset {
            params.fine.offset = off;
        }
        params.check().map_err(|e| P2dapError::InvalidPool(e.to_string()))?;
        PseudonymPool::from_vehicles(doc.year, params, doc.vehicles)
    }
}

enum BucketCounts {
    Dense(Vec<u8>),
    Sparse(HashMap<u32, u8>),
}

impl BucketCounts {
    fn new(bits: u32) -> Self {
        if bits <= DENSE_BUCKET_BITS {
            BucketCounts::Dense(vec![0; 1usize << bits])
        } else {
            BucketCounts::Sparse(HashMap::new())
        }
    }

    fn bump(&mut self, bucket: u32) -> u8 {
        let slot = match self {
            BucketCounts::Dense(v) => &mut v[bucket as usize],
            BucketCounts::Sparse(m) => m.entry(bucket).or_insert(0),
        };
        *slot = slot.saturating_add(1);
        *slot
    }
}

struct CandidateStream {
    rng: ChaCha8Rng,
    words: usize,
    len: usize,
}

impl CandidateStream {
    fn new(seed: u64, len: usize) -> Self {
        CandidateStream { rng: ChaCha8Rng::seed_from_u64(seed), words: len.div_ceil(4), len }
    }

    /// Consumes `words` little-endian words; a partial last word is truncated.
    fn next_into(&mut self, out: &mut [u8]) {
        let whole = self.len / 4 * 4;
        self.rng.fill_bytes(&mut out[..whole]);
        if whole < self.len {
            let word = self.rng.next_u32().to_le_bytes();
            out[whole..self.len].copy_from_slice(&word[..self.len - whole]);
        }
    }

    fn nth(&mut self, index: u64) -> Pseudonym {
        self.rng.set_word_pos(u128::from(index) * self.words as u128);
        let mut out = vec![0u8; self.len];
        self.next_into(&mut out);
        Pseudonym::new(out)
    }
}

/// Generates a pool satisfying the fine-group invariants.
pub fn generate_pool(keys: &DmvKeys, request: &PoolRequest) -> Result<PseudonymPool, P2dapError> {
    let params = keys.params();
    if request.n_vehicles == 0 || request.per_vehicle == 0 {
        return Err(P2dapError::InvalidRequest("n_vehicles and per_vehicle must be at least 1".into()));
    }
    if request.per_vehicle > u8::MAX as usize {
        return Err(P2dapError::InvalidRequest("per_vehicle must be at most 255".into()));
    }
    if request.pseudonym_len < MIN_PSEUDONYM_LEN {
        return Err(P2dapError::InvalidRequest(format!("pseudonym_len must be at least {MIN_PSEUDONYM_LEN} bytes")));
    }
    let bits = params.w_c() + params.w_f();
    if bits < 64 && (1u64 << bits) < request.n_vehicles as u64 {
        return Err(P2dapError::InvalidRequest(format!(
            "2^(w_c + w_f) = 2^{bits} fine groups cannot hold {} vehicles",
            request.n_vehicles
        )));
    }
    if bits > 32 {
        return Err(P2dapError::InvalidRequest("w_c + w_f must be at most 32".into()));
    }
    let budget = request.draw_budget.unwrap_or_else(|| request.default_budget(&params));

    let stage_one = BlockHasher::new(keys.coarse_hasher().key(), request.pseudonym_len);
    let stage_two = BlockHasher::new(keys.fine_key(), DIGEST_LEN);
    let bucket_of = |candidate: &[u8]| -> u32 {
        let d1 = stage_one.hash(candidate);
        let d2 = stage_two.hash(&d1.0);
        let c = extract_bits(&d1.0, params.coarse).expect("checked selector");
        let f = extract_bits(&d2.0, params.fine).expect("checked selector");
        (c << params.w_f()) | f
    };

    let len = request.pseudonym_len;
    let mut stream = CandidateStream::new(request.seed, len);
    let mut counts = BucketCounts::new(bits);
    let mut buckets: Vec<u32> = Vec::new();
    let mut completed: Vec<u32> = Vec::with_capacity(request.n_vehicles);
    let mut batch = vec![0u8; BATCH * len];
    let mut drawn: u64 = 0;

    'draw: while completed.len() < request.n_vehicles {
        let remaining = budget.saturating_sub(drawn);
        if remaining == 0 {
            return Err(P2dapError::GenerationExhausted {
                draws: drawn,
                completed: completed.len(),
                wanted: request.n_vehicles,
            });
        }
        let take = (BATCH as u64).min(remaining) as usize;
        for slot in batch[..take * len].chunks_mut(len) {
            stream.next_into(slot);
        }
        let ids: Vec<u32> = batch[..take * len].par_chunks(len).map(bucket_of).collect();
        for id in ids {
            buckets.push(id);
            drawn += 1;
            if counts.bump(id) as usize == request.per_vehicle {
                completed.push(id);
                if completed.len() == request.n_vehicles {
                    break 'draw;
                }
            }
        }
    }

    let slot_of: HashMap<u32, usize> = completed.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut members: Vec<Vec<Pseudonym>> = vec![Vec::with_capacity(request.per_vehicle); completed.len()];
    for (index, bucket) in buckets.iter().enumerate() {
        if let Some(&slot) = slot_of.get(bucket) {
            if members[slot].len() < request.per_vehicle {
                let p = stream.nth(index as u64);
                if members[slot].contains(&p) {
                    return Err(P2dapError::InvalidPool(format!("candidate {p} drawn twice")));
                }
                members[slot].push(p);
            }
        }
    }

    let mask = (1u32 << params.w_f()) - 1;
    let vehicles = completed
        .iter()
        .zip(members)
        .enumerate()
        .map(|(i, (&bucket, pseudonyms))| PoolVehicle {
            vehicle_id: VehicleId(i as u32),
            pseudonyms,
            coarse: CoarseValue(bucket >> params.w_f()),
            fine: Some(FineValue(bucket & mask)),
        })
        .collect();
    PseudonymPool::from_vehicles(request.year, params, vehicles)
}
