use serde::{Deserialize, Serialize};

use crate::chain::Hash32;

/// Height, hash and display color of one block, as shown on a node tile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub number: u64,
    pub hash: Hash32,
    pub short: String,
    /// `#rrggbb` from the first three hash bytes.
    pub color: String,
}

impl BlockSummary {
    pub fn new(number: u64, hash: Hash32) -> Self {
        BlockSummary { number, hash, short: hash.short(), color: hash.color_hex() }
    }
}

/// Live snapshot of one node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node_id: String,
    pub head_hash: Hash32,
    pub head_number: u64,
    #[serde(with = "u128_string")]
    pub total_difficulty: u128,
    /// Head first, then its parent (absent at genesis).
    pub last_two: Vec<BlockSummary>,
    pub syncing: bool,
    pub mining: bool,
    pub peers: Vec<String>,
}

/// JSON numbers cannot carry u128 portably.
pub(crate) mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
