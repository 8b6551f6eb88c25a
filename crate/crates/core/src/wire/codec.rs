use std::io::{Read, Write};

use crate::chain::{Block, Hash32};
use crate::node::{BlockSummary, NodeStatus};

use super::message::{Command, Message, NodeReport, Status};
use super::{WireError, MAX_FRAME_LEN};

mod tag {
    pub const STATUS: u8 = 0x01;
    pub const NEW_BLOCK: u8 = 0x02;
    pub const GET_BLOCKS: u8 = 0x03;
    pub const BLOCKS: u8 = 0x04;
    pub const PING: u8 = 0x05;
    pub const PONG: u8 = 0x06;
    pub const HELLO: u8 = 0x07;
    pub const COMMAND: u8 = 0x20;
    pub const REPORT: u8 = 0x30;

    pub const CMD_CONNECT: u8 = 0x01;
    pub const CMD_START_MINING: u8 = 0x02;
    pub const CMD_STOP_MINING: u8 = 0x03;
    pub const CMD_REPORT_STATUS: u8 = 0x04;
    pub const CMD_SHUTDOWN: u8 = 0x05;

    pub const REPORT_LISTENING: u8 = 0x01;
    pub const REPORT_STATUS: u8 = 0x02;
    pub const REPORT_FATAL: u8 = 0x03;
}

/// Encodes one frame: a 4-byte big-endian payload length, then the payload.
pub fn encode(message: &Message) -> Result<Vec<u8>, WireError> {
    message.validate()?;
    let mut out = vec![0u8; 4];
    put_message(&mut out, message);
    let len = out.len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len));
    }
    out[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let (message, used) = decode_frame(bytes)?;
    if used != bytes.len() {
        return Err(WireError::Malformed(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(message)
}

/// Decodes the first frame in `bytes`, returning it and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated { needed: 4, available: bytes.len() });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len));
    }
    let end = 4 + len;
    if bytes.len() < end {
        return Err(WireError::Truncated { needed: end, available: bytes.len() });
    }
    Ok((decode_payload(&bytes[4..end])?, end))
}

fn decode_payload(payload: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let message = r.message()?;
    if r.pos != payload.len() {
        return Err(WireError::Malformed(format!("{} unread payload bytes", payload.len() - r.pos)));
    }
    message.validate()?;
    Ok(message)
}

/// Blocking read of one frame from a stream. A clean EOF before the length
/// prefix is reported as [`WireError::Closed`].
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, WireError> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Err(WireError::Closed),
            Ok(0) => return Err(WireError::Truncated { needed: 4, available: got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len));
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => WireError::Truncated { needed: 4 + len, available: 4 },
        _ => e.into(),
    })?;
    decode_payload(&payload)
}

pub fn write_message<W: Write>(writer: &mut W, message: &Message) -> Result<(), WireError> {
    writer.write_all(&encode(message)?)?;
    writer.flush()?;
    Ok(())
}

fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u128(out: &mut Vec<u8>, v: u128) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_hash(out: &mut Vec<u8>, h: &Hash32) {
    out.extend_from_slice(&h.0);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, b: &Block) {
    out.extend_from_slice(&crate::chain::canonical_serialize(b));
    put_hash(out, &b.hash);
}

fn put_message(out: &mut Vec<u8>, message: &Message) {
    match message {
        Message::Status(s) => {
            put_u8(out, tag::STATUS);
            put_u64(out, s.chain_id);
            put_hash(out, &s.genesis_hash);
            put_hash(out, &s.head_hash);
            put_u64(out, s.head_number);
            put_u128(out, s.total_difficulty);
        }
        Message::NewBlock(b) => {
            put_u8(out, tag::NEW_BLOCK);
            put_block(out, b);
        }
        Message::GetBlocks { from_number, count } => {
            put_u8(out, tag::GET_BLOCKS);
            put_u64(out, *from_number);
            put_u32(out, *count);
        }
        Message::Blocks(blocks) => {
            put_u8(out, tag::BLOCKS);
            put_u32(out, blocks.len() as u32);
            for b in blocks {
                put_block(out, b);
            }
        }
        Message::Ping => put_u8(out, tag::PING),
        Message::Pong => put_u8(out, tag::PONG),
        Message::Hello { node_id } => {
            put_u8(out, tag::HELLO);
            put_str(out, node_id);
        }
        Message::Command(cmd) => {
            put_u8(out, tag::COMMAND);
            match cmd {
                Command::Connect { peer_id, addr } => {
                    put_u8(out, tag::CMD_CONNECT);
                    put_str(out, peer_id);
                    put_str(out, addr);
                }
                Command::StartMining => put_u8(out, tag::CMD_START_MINING),
                Command::StopMining => put_u8(out, tag::CMD_STOP_MINING),
                Command::ReportStatus => put_u8(out, tag::CMD_REPORT_STATUS),
                Command::Shutdown => put_u8(out, tag::CMD_SHUTDOWN),
            }
        }
        Message::Report(report) => {
            put_u8(out, tag::REPORT);
            match report {
                NodeReport::Listening { addr } => {
                    put_u8(out, tag::REPORT_LISTENING);
                    put_str(out, addr);
                }
                NodeReport::Status(s) => {
                    put_u8(out, tag::REPORT_STATUS);
                    put_str(out, &s.node_id);
                    put_hash(out, &s.head_hash);
                    put_u64(out, s.head_number);
                    put_u128(out, s.total_difficulty);
                    put_u32(out, s.last_two.len() as u32);
                    for summary in &s.last_two {
                        put_u64(out, summary.number);
                        put_hash(out, &summary.hash);
                    }
                    put_u8(out, u8::from(s.syncing));
                    put_u8(out, u8::from(s.mining));
                    put_u32(out, s.peers.len() as u32);
                    for p in &s.peers {
                        put_str(out, p);
                    }
                }
                NodeReport::Fatal { reason } => {
                    put_u8(out, tag::REPORT_FATAL);
                    put_str(out, reason);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WireError::Truncated { needed: self.pos.saturating_add(n), available: self.buf.len() })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128, WireError> {
        Ok(u128::from_be_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn hash(&mut self) -> Result<Hash32, WireError> {
        Ok(Hash32(self.take(32)?.try_into().expect("32 bytes")))
    }

    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(WireError::Malformed(format!("invalid bool byte {v}"))),
        }
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::Malformed("invalid UTF-8".into()))
    }

    /// Element count for a list whose items take at least `min_item` bytes;
    /// rejects counts the remaining payload cannot possibly hold.
    fn count(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        let remaining = self.buf.len() - self.pos;
        if n.saturating_mul(min_item) > remaining {
            return Err(WireError::Truncated {
                needed: self.pos + n.saturating_mul(min_item),
                available: self.buf.len(),
            });
        }
        Ok(n)
    }

    fn block(&mut self) -> Result<Block, WireError> {
        Ok(Block {
            number: self.u64()?,
            parent_hash: self.hash()?,
            miner_id: self.string()?,
            nonce: self.u64()?,
            difficulty: self.u64()?,
            timestamp_ms: self.u64()?,
            hash: self.hash()?,
        })
    }

    fn message(&mut self) -> Result<Message, WireError> {
        let t = self.u8()?;
        Ok(match t {
            tag::STATUS => Message::Status(Status {
                chain_id: self.u64()?,
                genesis_hash: self.hash()?,
                head_hash: self.hash()?,
                head_number: self.u64()?,
                total_difficulty: self.u128()?,
            }),
            tag::NEW_BLOCK => Message::NewBlock(self.block()?),
            tag::GET_BLOCKS => Message::GetBlocks { from_number: self.u64()?, count: self.u32()? },
            tag::BLOCKS => {
                let n = self.count(8 + 32 + 4 + 24 + 32)?;
                let mut blocks = Vec::with_capacity(n);
                for _ in 0..n {
                    blocks.push(self.block()?);
                }
                Message::Blocks(blocks)
            }
            tag::PING => Message::Ping,
            tag::PONG => Message::Pong,
            tag::HELLO => Message::Hello { node_id: self.string()? },
            tag::COMMAND => Message::Command(match self.u8()? {
                tag::CMD_CONNECT => Command::Connect { peer_id: self.string()?, addr: self.string()? },
                tag::CMD_START_MINING => Command::StartMining,
                tag::CMD_STOP_MINING => Command::StopMining,
                tag::CMD_REPORT_STATUS => Command::ReportStatus,
                tag::CMD_SHUTDOWN => Command::Shutdown,
                other => return Err(WireError::UnknownTag(other)),
            }),
            tag::REPORT => Message::Report(match self.u8()? {
                tag::REPORT_LISTENING => NodeReport::Listening { addr: self.string()? },
                tag::REPORT_STATUS => {
                    let node_id = self.string()?;
                    let head_hash = self.hash()?;
                    let head_number = self.u64()?;
                    let total_difficulty = self.u128()?;
                    let n = self.count(40)?;
                    let mut last_two = Vec::with_capacity(n);
                    for _ in 0..n {
                        let number = self.u64()?;
                        last_two.push(BlockSummary::new(number, self.hash()?));
                    }
                    let syncing = self.bool()?;
                    let mining = self.bool()?;
                    let n = self.count(4)?;
                    let mut peers = Vec::with_capacity(n);
                    for _ in 0..n {
                        peers.push(self.string()?);
                    }
                    NodeReport::Status(NodeStatus {
                        node_id,
                        head_hash,
                        head_number,
                        total_difficulty,
                        last_two,
                        syncing,
                        mining,
                        peers,
                    })
                }
                tag::REPORT_FATAL => NodeReport::Fatal { reason: self.string()? },
                other => return Err(WireError::UnknownTag(other)),
            }),
            other => return Err(WireError::UnknownTag(other)),
        })
    }
}
