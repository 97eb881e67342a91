use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{P2dapError, PseudonymPool, SuspiciousReport};
use crate::crypto::{CoarseValue, DmvKeys, FineValue, Pseudonym};
use crate::ids::RsuId;

/// Source of `(coarse, fine)` projections on the DMV side.
pub trait FineGrouping {
    fn classify(&self, p: &Pseudonym) -> Result<(CoarseValue, FineValue), P2dapError>;
}

impl FineGrouping for DmvKeys {
    fn classify(&self, p: &Pseudonym) -> Result<(CoarseValue, FineValue), P2dapError> {
        Ok(DmvKeys::classify(self, p))
    }
}

/// Table lookup in a DMV-tier pool export.
impl FineGrouping for PseudonymPool {
    fn classify(&self, p: &Pseudonym) -> Result<(CoarseValue, FineValue), P2dapError> {
        match (self.coarse_of(p), self.fine_of(p)) {
            (Some(c), Some(f)) => Ok((c, f)),
            (Some(_), None) => Err(P2dapError::MissingFineView),
            _ => Err(P2dapError::UnknownPseudonym(p.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGroup {
    pub fine: FineValue,
    pub pseudonyms: Vec<Pseudonym>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// Every fine group holding two or more reported pseudonyms.
    Sybil {
        groups: Vec<FineGroup>,
    },
    FalseAlarm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub rsb_id: RsuId,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl Adjudication {
    pub fn is_sybil(&self) -> bool {
        matches!(self.verdict, Verdict::Sybil { .. })
    }
}

/// Recomputes fine groups for every reported pseudonym. Nothing the RSB
/// attached beyond the pseudonym bytes is trusted.
pub fn dmv_adjudicate<F: FineGrouping>(
    report: &SuspiciousReport,
    dmv: &F,
    pseudonym_len: usize,
) -> Result<Adjudication, P2dapError> {
    if report.pseudonyms.len() < 2 {
        return Err(P2dapError::MalformedReport("fewer than two pseudonyms".into()));
    }
    let mut groups: BTreeMap<FineValue, Vec<Pseudonym>> = BTreeMap::new();
    for p in &report.pseudonyms {
        if p.len() != pseudonym_len {
            return Err(P2dapError::MalformedReport(format!(
                "pseudonym {p} is {} bytes, expected {pseudonym_len}",
                p.len()
            )));
        }
        let (_, fine) = dmv.classify(p)?;
        let members = groups.entry(fine).or_default();
        if !members.contains(p) {
            members.push(p.clone());
        }
    }
    let sybil: Vec<FineGroup> = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(fine, pseudonyms)| FineGroup { fine, pseudonyms })
        .collect();
    let verdict = if sybil.is_empty() { Verdict::FalseAlarm } else { Verdict::Sybil { groups: sybil } };
    Ok(Adjudication { rsb_id: report.rsb_id, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{HashKey, HashParams, KeyRole};
    use crate::p2dap::{generate_pool, PoolRequest};

    fn keys() -> DmvKeys {
        DmvKeys::new(
            HashKey::new(KeyRole::GlobalCoarse, vec![5; 32]).unwrap(),
            HashKey::new(KeyRole::DmvFine, vec![6; 32]).unwrap(),
            HashParams::with_widths(2, 8).unwrap(),
        )
        .unwrap()
    }

    fn report(ps: Vec<Pseudonym>) -> SuspiciousReport {
        let mut sorted = ps.clone();
        sorted.sort();
        SuspiciousReport {
            rsb_id: RsuId(1),
            window_start: 0.0,
            window_end: 1.0,
            coarse: CoarseValue(0),
            trigger: ps[0].clone(),
            pseudonyms: sorted,
        }
    }

    #[test]
    fn same_vehicle_pair_is_sybil() {
        let k = keys();
        let pool = generate_pool(&k, &PoolRequest::new(10, 3, 4)).unwrap();
        let v = &pool.vehicles()[4];
        let adj = dmv_adjudicate(&report(v.pseudonyms[..2].to_vec()), &k, 16).unwrap();
        assert_eq!(
            adj.verdict,
            Verdict::Sybil {
                groups: vec![FineGroup {
                    fine: v.fine.unwrap(),
                    pseudonyms: {
                        let mut p = v.pseudonyms[..2].to_vec();
                        p.sort();
                        p
                    }
                }]
            }
        );
    }

    #[test]
    fn coarse_collision_across_vehicles_is_false_alarm() {
        let k = keys();
        // two coarse bits: 10 vehicles must collide somewhere
        let pool = generate_pool(&k, &PoolRequest::new(10, 2, 4)).unwrap();
        let vs = pool.vehicles();
        let (a, b) = (0..vs.len())
            .flat_map(|i| (i + 1..vs.len()).map(move |j| (i, j)))
            .find(|&(i, j)| vs[i].coarse == vs[j].coarse)
            .expect("pigeonhole");
        let r = report(vec![vs[a].pseudonyms[0].clone(), vs[b].pseudonyms[1].clone()]);
        assert_eq!(dmv_adjudicate(&r, &k, 16).unwrap().verdict, Verdict::FalseAlarm);
        // table lookup agrees with recomputation
        assert_eq!(dmv_adjudicate(&r, &pool, 16).unwrap().verdict, Verdict::FalseAlarm);
    }

    #[test]
    fn wrong_width_is_malformed() {
        let r = report(vec![Pseudonym::new(vec![1; 16]), Pseudonym::new(vec![2; 12])]);
        assert!(matches!(dmv_adjudicate(&r, &keys(), 16), Err(P2dapError::MalformedReport(_))));
        let single = report(vec![Pseudonym::new(vec![1; 16])]);
        assert!(matches!(dmv_adjudicate(&single, &keys(), 16), Err(P2dapError::MalformedReport(_))));
    }

    #[test]
    fn rsb_tier_pool_cannot_adjudicate() {
        let k = keys();
        let pool = generate_pool(&k, &PoolRequest::new(3, 2, 4)).unwrap().rsb_view();
        let v = &pool.vehicles()[0];
        assert_eq!(dmv_adjudicate(&report(v.pseudonyms.clone()), &pool, 16), Err(P2dapError::MissingFineView));
    }
}
