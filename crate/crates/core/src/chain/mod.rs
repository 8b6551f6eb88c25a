//! Blocks, proof-of-work and the per-node block store with fork choice.

mod block;
mod pow;
mod store;

pub use block::{canonical_serialize, Block, GenesisConfig, Hash32};
pub use pow::{pow_target, pow_valid, Target};
pub use store::{mainchain_of, ChainStore, HeadChange, InsertOutcome, Insertion, ORPHAN_POOL_CAP};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("block {0} hash does not match its contents")]
    BadHash(Hash32),
    #[error("block {0} does not meet its proof-of-work target")]
    InvalidPow(Hash32),
    #[error("genesis {got} conflicts with stored genesis {expected}")]
    GenesisMismatch { expected: Hash32, got: Hash32 },
    #[error("malformed block: {0}")]
    Malformed(&'static str),
    #[error("block {hash} claims height {number} but its parent is at height {parent_number}")]
    BadHeight { hash: Hash32, number: u64, parent_number: u64 },
}
