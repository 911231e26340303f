//! File push protocol between the gateway and the ingest service.
//!
//! ```text
//! [name_len u16 LE][name utf-8][body_len u32 LE][body][crc32 u32 LE]
//! ```
//!
//! The receiver answers each push with one byte: `0x06` once the body is
//! verified and written, `0x15` otherwise. Several pushes may share one
//! connection.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use thiserror::Error;

use crate::wire::ACK;

pub const MAX_BODY: u32 = 64 * 1024 * 1024;
const CRC32: crc::Crc<u32> = crc::Crc::<u32>::new(&crc::CRC_32_ISO_HDLC);

pub fn crc32(data: &[u8]) -> u32 {
    CRC32.checksum(data)
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("transfer i/o: {0}")]
    Io(#[from] io::Error),
    #[error("receiver refused {0}")]
    Refused(String),
    #[error("file name {0:?} is not a plain name")]
    BadName(String),
    #[error("channel unavailable")]
    Unavailable,
}

/// Destination for spool files. A put either fully succeeds or fully fails;
/// repeating a put for the same name overwrites at the destination.
pub trait TransferChannel {
    fn put(&mut self, name: &str, body: &[u8]) -> Result<(), TransferError>;
}

impl<C: TransferChannel + ?Sized> TransferChannel for &mut C {
    fn put(&mut self, name: &str, body: &[u8]) -> Result<(), TransferError> {
        (**self).put(name, body)
    }
}

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= u16::MAX as usize
        && !name.starts_with('.')
        && !name.contains(['/', '\\', '\0'])
}

pub fn encode_push(name: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(name.len() + body.len() + 10);
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&crc32(body).to_le_bytes());
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Push {
    pub name: String,
    pub body: Vec<u8>,
    /// The trailing checksum matched the body.
    pub verified: bool,
}

/// Reads one push; `Ok(None)` on a clean end of stream before a new push.
pub fn read_push<R: Read>(reader: &mut R) -> io::Result<Option<Push>> {
    let mut len2 = [0u8; 2];
    match reader.read_exact(&mut len2) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut name = vec![0u8; u16::from_le_bytes(len2) as usize];
    reader.read_exact(&mut name)?;
    let mut len4 = [0u8; 4];
    reader.read_exact(&mut len4)?;
    let body_len = u32::from_le_bytes(len4);
    if body_len > MAX_BODY {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("body of {body_len} bytes exceeds limit"),
        ));
    }
    let mut body = vec![0u8; body_len as usize];
    reader.read_exact(&mut body)?;
    reader.read_exact(&mut len4)?;
    let verified = u32::from_le_bytes(len4) == crc32(&body);
    Ok(Some(Push {
        name: String::from_utf8_lossy(&name).into_owned(),
        body,
        verified,
    }))
}

/// Pushes files over one TCP connection, reconnecting after any failure.
#[derive(Debug)]
pub struct TcpTransferChannel {
    dest: SocketAddr,
    timeout: Duration,
    conn: Option<TcpStream>,
}

impl TcpTransferChannel {
    pub fn new(dest: SocketAddr) -> Self {
        TcpTransferChannel {
            dest,
            timeout: Duration::from_secs(30),
            conn: None,
        }
    }

    fn connection(&mut self) -> io::Result<&mut TcpStream> {
        if self.conn.is_none() {
            let s = TcpStream::connect_timeout(&self.dest, self.timeout)?;
            s.set_read_timeout(Some(self.timeout))?;
            s.set_write_timeout(Some(self.timeout))?;
            s.set_nodelay(true)?;
            self.conn = Some(s);
        }
        Ok(self.conn.as_mut().expect("just connected"))
    }

    /// Closes the connection; the next put reconnects.
    pub fn close(&mut self) {
        self.conn = None;
    }
}

impl TransferChannel for TcpTransferChannel {
    fn put(&mut self, name: &str, body: &[u8]) -> Result<(), TransferError> {
        if !valid_name(name) {
            return Err(TransferError::BadName(name.to_string()));
        }
        let frame = encode_push(name, body);
        let result = (|| {
            let conn = self.connection()?;
            conn.write_all(&frame)?;
            conn.flush()?;
            let mut reply = [0u8; 1];
            conn.read_exact(&mut reply)?;
            Ok::<u8, io::Error>(reply[0])
        })();
        match result {
            Ok(ACK) => Ok(()),
            Ok(_) => {
                self.close();
                Err(TransferError::Refused(name.to_string()))
            }
            Err(e) => {
                self.close();
                Err(e.into())
            }
        }
    }
}
