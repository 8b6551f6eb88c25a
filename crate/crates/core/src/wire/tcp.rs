//! Blocking TCP transport for multi-process runs.
//!
//! A connection starts with a mutual `Hello` + `Status` exchange. The side
//! that accepts always answers before validating, so both ends observe a
//! chain-id or genesis mismatch and drop the link.

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::{check_compatible, read_message, write_message, Message, Status, WireError};

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// An established, handshaken peer connection delivering ordered, reliable
/// messages.
#[derive(Debug)]
pub struct PeerHandle {
    pub peer_id: String,
    pub remote_status: Status,
    stream: TcpStream,
}

impl PeerHandle {
    pub fn send(&mut self, message: &Message) -> Result<(), WireError> {
        write_message(&mut self.stream, message)
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.stream.peer_addr().ok()
    }

    /// A second handle on the same socket for a dedicated reader thread.
    pub fn reader(&self) -> Result<MessageReader, WireError> {
        Ok(MessageReader { stream: self.stream.try_clone()? })
    }

    pub fn close(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

#[derive(Debug)]
pub struct MessageReader {
    stream: TcpStream,
}

impl MessageReader {
    /// Blocks for the next frame; [`WireError::Closed`] on orderly shutdown.
    pub fn next_message(&mut self) -> Result<Message, WireError> {
        read_message(&mut self.stream)
    }
}

/// Dials `addr` and performs the handshake.
pub fn connect(local_id: &str, local_status: &Status, addr: &str, timeout: Duration) -> Result<PeerHandle, WireError> {
    let unreachable = |reason: String| WireError::Unreachable { addr: addr.to_string(), reason };
    let resolved: Vec<SocketAddr> = addr.to_socket_addrs().map_err(|e| unreachable(e.to_string()))?.collect();
    let target = resolved.first().ok_or_else(|| unreachable("no address".into()))?;
    let mut stream = TcpStream::connect_timeout(target, timeout).map_err(|e| unreachable(e.to_string()))?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    write_message(&mut stream, &Message::Hello { node_id: local_id.to_string() })?;
    write_message(&mut stream, &Message::Status(local_status.clone()))?;
    let (peer_id, remote_status) = read_handshake(&mut stream).map_err(|e| match e {
        WireError::Io(io) if is_timeout(&io) => unreachable("handshake timed out".into()),
        other => other,
    })?;
    if let Err(e) = check_compatible(local_status, &remote_status) {
        let _ = stream.shutdown(std::net::Shutdown::Both);
        return Err(e);
    }
    stream.set_read_timeout(None)?;
    Ok(PeerHandle { peer_id, remote_status, stream })
}

/// Completes the handshake on an inbound connection.
pub fn accept(mut stream: TcpStream, local_id: &str, local_status: &Status) -> Result<PeerHandle, WireError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(DEFAULT_CONNECT_TIMEOUT))?;
    let (peer_id, remote_status) = read_handshake(&mut stream)?;
    write_message(&mut stream, &Message::Hello { node_id: local_id.to_string() })?;
    write_message(&mut stream, &Message::Status(local_status.clone()))?;
    if let Err(e) = check_compatible(local_status, &remote_status) {
        let _ = stream.shutdown(std::net::Shutdown::Both);
        return Err(e);
    }
    stream.set_read_timeout(None)?;
    Ok(PeerHandle { peer_id, remote_status, stream })
}

fn read_handshake(stream: &mut TcpStream) -> Result<(String, Status), WireError> {
    let Message::Hello { node_id } = read_message(stream)? else {
        return Err(WireError::Malformed("expected Hello".into()));
    };
    let Message::Status(status) = read_message(stream)? else {
        return Err(WireError::Malformed("expected Status".into()));
    };
    Ok((node_id, status))
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}
