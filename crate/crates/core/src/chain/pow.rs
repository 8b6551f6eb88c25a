use super::{Block, ChainError, Hash32};

/// Proof-of-work threshold `floor(2^256 / difficulty)`.
///
/// A hash read as a big-endian 256-bit integer is valid iff it is strictly
/// below the threshold, so one attempt succeeds with probability `1 / difficulty`
/// for a uniform hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Difficulty 1: the threshold is 2^256 and every hash qualifies.
    Unbounded,
    Below([u8; 32]),
}

impl Target {
    pub fn admits(&self, hash: &Hash32) -> bool {
        match self {
            Target::Unbounded => true,
            // Big-endian byte arrays order the same way as the integers they encode.
            Target::Below(limit) => hash.0 < *limit,
        }
    }
}

pub fn pow_target(difficulty: u64) -> Result<Target, ChainError> {
    match difficulty {
        0 => Err(ChainError::InvalidParameter("difficulty must be positive")),
        1 => Ok(Target::Unbounded),
        d => {
            // Long division of 2^256 (limbs [1, 0, 0, 0, 0], most significant
            // first) by d. The leading quotient limb is zero for d >= 2.
            let divisor = u128::from(d);
            let mut rem: u128 = 1;
            let mut out = [0u8; 32];
            for limb in 0..4 {
                let acc = rem << 64;
                let q = acc / divisor;
                rem = acc % divisor;
                out[limb * 8..limb * 8 + 8].copy_from_slice(&(q as u64).to_be_bytes());
            }
            Ok(Target::Below(out))
        }
    }
}

/// Whether `block.hash` meets the block's own difficulty. Does not re-hash.
pub fn pow_valid(block: &Block) -> Result<bool, ChainError> {
    Ok(pow_target(block.difficulty)?.admits(&block.hash))
}
