mod common;

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use common::RawKeys;
use proptest::prelude::*;
use vanet_sybil_core::crypto::{CoarseValue, Pseudonym};
use vanet_sybil_core::ids::RsuId;
use vanet_sybil_core::p2dap::{dmv_adjudicate, P2dapError, PseudonymPool, SuspiciousReport, Verdict};

fn full() -> &'static (RawKeys, PseudonymPool) {
    static POOL: OnceLock<(RawKeys, PseudonymPool)> = OnceLock::new();
    POOL.get_or_init(|| {
        let keys = RawKeys::new(3, 8, 16);
        let pool = keys.pool(100, 8, 77);
        (keys, pool)
    })
}

/// Checks every pool invariant against the reference hash route.
fn assert_pool_invariants(keys: &RawKeys, pool: &PseudonymPool, n: usize, k: usize) {
    assert_eq!(pool.len(), n);
    let mut pairs = HashSet::new();
    let mut seen = HashSet::new();
    for v in pool.vehicles() {
        assert_eq!(v.pseudonyms.len(), k);
        let fine = v.fine.expect("dmv tier").0;
        for p in &v.pseudonyms {
            assert!(seen.insert(p.clone()), "{p} owned twice");
            assert_eq!(keys.classify(p.as_bytes()), (v.coarse.0, fine), "{p} of vehicle {}", v.vehicle_id.0);
            assert_eq!(pool.owner_of(p), Some(v.vehicle_id));
        }
        assert!(pairs.insert((v.coarse.0, fine)), "(coarse, fine) reused");
    }
}

#[test]
fn full_pool_rehashes_under_reference_route() {
    let (keys, pool) = full();
    assert_pool_invariants(keys, pool, 100, 8);
    let fines: HashSet<u32> = pool.vehicles().iter().map(|v| v.fine.unwrap().0).collect();
    assert_eq!(fines.len(), 100, "fine values unique per vehicle");
}

fn report(pseudonyms: Vec<Pseudonym>, coarse: u32) -> SuspiciousReport {
    let mut pseudonyms = pseudonyms;
    pseudonyms.sort();
    SuspiciousReport {
        rsb_id: RsuId(1),
        window_start: 0.0,
        window_end: 1.0,
        coarse: CoarseValue(coarse),
        trigger: pseudonyms[0].clone(),
        pseudonyms,
    }
}

#[test]
fn adjudication_matches_ownership_exhaustively() {
    let (keys, pool) = full();
    let dmv = keys.dmv();
    let mut by_coarse: HashMap<u32, Vec<(usize, &Pseudonym)>> = HashMap::new();
    for (i, v) in pool.vehicles().iter().enumerate() {
        for p in &v.pseudonyms {
            by_coarse.entry(v.coarse.0).or_default().push((i, p));
        }
    }
    let (mut within, mut across, mut errors) = (0, 0, 0);
    for (&c, members) in &by_coarse {
        for (a, &(va, pa)) in members.iter().enumerate() {
            for &(vb, pb) in &members[a + 1..] {
                let r = report(vec![pa.clone(), pb.clone()], c);
                let truth = va == vb;
                for verdict in [dmv_adjudicate(&r, &dmv, 16).unwrap(), dmv_adjudicate(&r, pool, 16).unwrap()] {
                    if verdict.is_sybil() != truth {
                        errors += 1;
                    }
                }
                if truth {
                    within += 1;
                } else {
                    across += 1;
                }
            }
        }
    }
    assert_eq!(within, 100 * 8 * 7 / 2);
    assert!(across > 0, "no cross-vehicle coarse collisions to test");
    assert_eq!(errors, 0);
}

#[test]
fn sybil_verdict_names_the_shared_group() {
    let (_, pool) = full();
    let v = &pool.vehicles()[0];
    let other = pool.vehicles().iter().find(|o| o.coarse == v.coarse && o.vehicle_id != v.vehicle_id);
    let mut ps = vec![v.pseudonyms[0].clone(), v.pseudonyms[1].clone()];
    ps.extend(other.map(|o| o.pseudonyms[0].clone()));
    let adj = dmv_adjudicate(&report(ps, v.coarse.0), pool, 16).unwrap();
    match adj.verdict {
        Verdict::Sybil { groups } => {
            assert_eq!(groups.len(), 1);
            assert_eq!(groups[0].fine, v.fine.unwrap());
            let mut want = v.pseudonyms[..2].to_vec();
            want.sort();
            let mut got = groups[0].pseudonyms.clone();
            got.sort();
            assert_eq!(got, want);
        }
        Verdict::FalseAlarm => panic!("expected a Sybil verdict"),
    }
}

#[test]
fn malformed_and_rsb_tier_reports_rejected() {
    let (_, pool) = full();
    let v = &pool.vehicles()[0];
    let short = report(vec![v.pseudonyms[0].clone(), Pseudonym::new(vec![1; 8])], v.coarse.0);
    assert!(matches!(dmv_adjudicate(&short, pool, 16), Err(P2dapError::MalformedReport(_))));
    let pair = report(v.pseudonyms[..2].to_vec(), v.coarse.0);
    assert_eq!(dmv_adjudicate(&pair, &pool.rsb_view(), 16), Err(P2dapError::MissingFineView));
}

#[test]
fn same_seed_pools_are_byte_identical() {
    let keys = RawKeys::new(9, 6, 10);
    assert_eq!(keys.pool(40, 4, 5).to_json(), keys.pool(40, 4, 5).to_json());
    assert_ne!(keys.pool(40, 4, 5).to_json(), keys.pool(40, 4, 6).to_json());
}

#[test]
fn json_tiers_round_trip() {
    let (_, pool) = full();
    let back = PseudonymPool::from_json(&pool.to_json()).unwrap();
    assert_eq!(&back, pool);
    let rsb = pool.rsb_view().to_json();
    assert!(!rsb.contains("\"fine\""));
    let back = PseudonymPool::from_json(&rsb).unwrap();
    assert!(!back.has_fine_view());
    assert_eq!(back.coarse_of(&pool.vehicles()[3].pseudonyms[2]), Some(pool.vehicles()[3].coarse));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_pools_satisfy_invariants(n in 1usize..30, k in 1usize..6, seed in any::<u64>(),
                                         key_seed in any::<u8>(), w_c in 2u32..7, w_f in 6u32..10) {
        let keys = RawKeys::new(key_seed, w_c, w_f);
        let pool = keys.pool(n, k, seed);
        assert_pool_invariants(&keys, &pool, n, k);
    }
}
