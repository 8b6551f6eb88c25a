//! Peer messages, their framed binary encoding, and the two transports that
//! carry them: TCP for multi-process runs and a seeded-latency simulated
//! transport for deterministic experiments.
//!
//! The byte layout is documented in `docs/wire-format.md` and pinned by the
//! golden frames under `tests/fixtures/wire/`.

mod codec;
mod latency;
mod message;
mod sim;
pub mod tcp;

pub use codec::{decode, decode_frame, encode, read_message, write_message};
pub use latency::LatencyModel;
pub use message::{check_compatible, Command, Message, NodeReport, Status, MAX_GET_BLOCKS};
pub use sim::{Delivery, SimTransport};

use thiserror::Error;

/// Frames larger than this are refused on both encode and decode.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated frame: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("frame of {0} bytes exceeds the 16 MiB cap")]
    Oversize(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("incompatible peer: {0}")]
    IncompatiblePeer(String),
    #[error("peer {addr} unreachable: {reason}")]
    Unreachable { addr: String, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
