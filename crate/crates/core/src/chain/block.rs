use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// A 32-byte SHA-256 digest. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0u8; 32]);

    pub fn digest(bytes: &[u8]) -> Self {
        Hash32(Sha256::digest(bytes).into())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex characters, for tables and tiles.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    /// Display color of a block: its first three hash bytes read as RGB.
    pub fn color(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// [`Hash32::color`] as a `#rrggbb` string.
    pub fn color_hex(&self) -> String {
        format!("#{}", hex::encode(&self.0[..3]))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", self.short())
    }
}

impl FromStr for Hash32 {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Hash32(out))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The hash-linked unit of consensus.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub number: u64,
    pub parent_hash: Hash32,
    pub miner_id: String,
    pub nonce: u64,
    pub difficulty: u64,
    /// Milliseconds since the start of the run. Informational only.
    pub timestamp_ms: u64,
    pub hash: Hash32,
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block(#{} {} <- {} by {})", self.number, self.hash.short(), self.parent_hash.short(), self.miner_id)
    }
}

impl Block {
    /// Builds a block and computes its hash.
    pub fn seal(
        number: u64,
        parent_hash: Hash32,
        miner_id: impl Into<String>,
        nonce: u64,
        difficulty: u64,
        timestamp_ms: u64,
    ) -> Self {
        let mut block = Block {
            number,
            parent_hash,
            miner_id: miner_id.into(),
            nonce,
            difficulty,
            timestamp_ms,
            hash: Hash32::ZERO,
        };
        block.hash = block.compute_hash();
        block
    }

    pub fn compute_hash(&self) -> Hash32 {
        Hash32::digest(&canonical_serialize(self))
    }

    pub fn hash_matches(&self) -> bool {
        self.compute_hash() == self.hash
    }

    pub fn is_genesis(&self) -> bool {
        self.number == 0
    }
}

/// Fixed-layout preimage of a block hash:
///
/// ```text
/// number        u64 BE
/// parent_hash   32 bytes
/// miner_id      u32 BE length, then UTF-8 bytes
/// nonce         u64 BE
/// difficulty    u64 BE
/// timestamp_ms  u64 BE
/// ```
pub fn canonical_serialize(block: &Block) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 32 + 4 + block.miner_id.len() + 24);
    out.extend_from_slice(&block.number.to_be_bytes());
    out.extend_from_slice(&block.parent_hash.0);
    out.extend_from_slice(&(block.miner_id.len() as u32).to_be_bytes());
    out.extend_from_slice(block.miner_id.as_bytes());
    out.extend_from_slice(&block.nonce.to_be_bytes());
    out.extend_from_slice(&block.difficulty.to_be_bytes());
    out.extend_from_slice(&block.timestamp_ms.to_be_bytes());
    out
}

/// Parameters of an experiment's genesis block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_id: u64,
    pub difficulty: u64,
    /// Opaque bytes (hex in config files) mixed into the genesis hash.
    #[serde(default, with = "hex_bytes")]
    pub extra: Vec<u8>,
}

impl GenesisConfig {
    pub fn new(chain_id: u64, difficulty: u64) -> Self {
        GenesisConfig { chain_id, difficulty, extra: Vec::new() }
    }

    /// The height-0 block every node of the experiment starts from.
    ///
    /// `chain_id` and `extra` are folded into the miner field as
    /// `genesis/<chain_id>/<hex extra>`, so any change to the config changes
    /// the genesis hash. The genesis block is not subject to proof-of-work.
    pub fn genesis_block(&self) -> Block {
        Block::seal(
            0,
            Hash32::ZERO,
            format!("genesis/{}/{}", self.chain_id, hex::encode(&self.extra)),
            0,
            self.difficulty,
            0,
        )
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
