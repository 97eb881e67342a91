//! Privacy-preserving detection of abuses of pseudonyms.
//!
//! The DMV generates a pool in which each vehicle owns one fine-grained
//! group. RSBs hold only `k_c`: they buffer overheard pseudonyms and report
//! any two distinct ones that fall in the same coarse group within the
//! simultaneity window. The DMV rehashes reported pseudonyms under both keys
//! and calls Sybil only when two of them share a fine group.

mod dmv;
mod pool;
mod rsb;

use thiserror::Error;

use crate::crypto::{CryptoError, Pseudonym};

pub use dmv::{dmv_adjudicate, Adjudication, FineGroup, FineGrouping, Verdict};
pub use pool::{generate_pool, PoolRequest, PoolVehicle, PseudonymPool, MIN_PSEUDONYM_LEN};
pub use rsb::{window_index, Beacon, RsbObserver, SuspiciousReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum P2dapError {
    #[error("pool generation exhausted after {draws} draws ({completed} of {wanted} vehicles filled)")]
    GenerationExhausted { draws: u64, completed: usize, wanted: usize },
    #[error("invalid pool request: {0}")]
    InvalidRequest(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("pseudonym {0} is not in the pool")]
    UnknownPseudonym(Pseudonym),
    #[error("pool export has no fine-grained values")]
    MissingFineView,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}
