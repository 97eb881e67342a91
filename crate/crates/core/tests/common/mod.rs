#![allow(dead_code)]

use num_bigint::BigUint;
use vanet_sybil_core::crypto::{DmvKeys, HashKey, HashParams, KeyRole};
use vanet_sybil_core::p2dap::{generate_pool, PoolRequest, PseudonymPool};

/// SHA-1(key || data) computed by a second, unrelated SHA-1 implementation.
pub fn sha1_ref(key: &[u8], data: &[u8]) -> [u8; 20] {
    let mut h = sha1_smol::Sha1::new();
    h.update(key);
    h.update(data);
    h.digest().bytes()
}

/// Bits `[offset, offset + width)` of `digest` read as a big-endian integer.
pub fn bits_ref(digest: &[u8], offset: u32, width: u32) -> u32 {
    let n = BigUint::from_bytes_be(digest);
    let mask = (BigUint::from(1u8) << width) - 1u8;
    let v = (n >> offset) & mask;
    v.to_u32_digits().first().copied().unwrap_or(0)
}

pub struct RawKeys {
    pub k_c: Vec<u8>,
    pub k_f: Vec<u8>,
    pub w_c: u32,
    pub w_f: u32,
}

impl RawKeys {
    pub fn new(seed: u8, w_c: u32, w_f: u32) -> Self {
        let k_c: Vec<u8> = (0..32u8).map(|i| i.wrapping_mul(31).wrapping_add(seed)).collect();
        let k_f: Vec<u8> = (0..32u8).map(|i| i.wrapping_mul(17) ^ seed.wrapping_add(0x5a)).collect();
        RawKeys { k_c, k_f, w_c, w_f }
    }

    pub fn dmv(&self) -> DmvKeys {
        DmvKeys::new(
            HashKey::new(KeyRole::GlobalCoarse, self.k_c.clone()).unwrap(),
            HashKey::new(KeyRole::DmvFine, self.k_f.clone()).unwrap(),
            HashParams::with_widths(self.w_c, self.w_f).unwrap(),
        )
        .unwrap()
    }

    /// (coarse, fine) by the reference route.
    pub fn classify(&self, pseudonym: &[u8]) -> (u32, u32) {
        let s1 = sha1_ref(&self.k_c, pseudonym);
        let s2 = sha1_ref(&self.k_f, &s1);
        (bits_ref(&s1, 0, self.w_c), bits_ref(&s2, self.w_c, self.w_f))
    }

    pub fn pool(&self, n: usize, k: usize, seed: u64) -> PseudonymPool {
        generate_pool(&self.dmv(), &PoolRequest::new(n, k, seed)).unwrap()
    }
}

use std::sync::OnceLock;

use vanet_sybil_core::sim::trace::{parse_trace, TraceEvent, TraceRecord};
use vanet_sybil_core::{Deployment, PoolConfig};

/// The default 100 x 8 deployment, built once per test binary.
pub fn default_deployment() -> &'static Deployment {
    static DEP: OnceLock<Deployment> = OnceLock::new();
    DEP.get_or_init(|| Deployment::generate(&PoolConfig::default()).unwrap())
}

pub fn records(trace: &str) -> Vec<TraceRecord> {
    parse_trace(trace).unwrap()
}

pub fn events(trace: &str) -> Vec<(f64, TraceEvent)> {
    records(trace).into_iter().map(|r| (r.t, r.event)).collect()
}
