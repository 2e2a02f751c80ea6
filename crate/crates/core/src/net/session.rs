//! HELLO / HELLO_ACK handshake and role bookkeeping.

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::net::frame::{Conn, FrameType};
use crate::net::AbortCode;

pub const PROTOCOL_VERSION: u16 = 1;
const HELLO_LEN: usize = 2 + 1 + 4 + 16 + 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Compute1 = 1,
    Compute2 = 2,
    DataPartner = 3,
    Dealer = 4,
    Analyst = 5,
}

impl Role {
    pub fn from_byte(b: u8) -> Option<Role> {
        Some(match b {
            1 => Role::Compute1,
            2 => Role::Compute2,
            3 => Role::DataPartner,
            4 => Role::Dealer,
            5 => Role::Analyst,
            _ => return None,
        })
    }

    /// The compute role holding share `index`.
    pub fn compute(index: u8) -> Role {
        if index == 1 {
            Role::Compute1
        } else {
            Role::Compute2
        }
    }
}

/// `version u16 | role u8 | partner_id u32 | session_id[16] | config_hash[32]`, big-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub version: u16,
    pub role: Role,
    /// Meaningful for data partners only.
    pub partner_id: u32,
    pub session_id: [u8; 16],
    pub config_hash: [u8; 32],
}

impl Hello {
    pub fn new(role: Role, partner_id: u32, session_id: [u8; 16], config_hash: [u8; 32]) -> Self {
        Hello { version: PROTOCOL_VERSION, role, partner_id, session_id, config_hash }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HELLO_LEN);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.push(self.role as u8);
        out.extend_from_slice(&self.partner_id.to_be_bytes());
        out.extend_from_slice(&self.session_id);
        out.extend_from_slice(&self.config_hash);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != HELLO_LEN {
            return Err(Error::Framing(format!("HELLO of {} bytes", b.len())));
        }
        let role = Role::from_byte(b[2]).ok_or_else(|| Error::Protocol(format!("unknown role {}", b[2])))?;
        Ok(Hello {
            version: u16::from_be_bytes([b[0], b[1]]),
            role,
            partner_id: u32::from_be_bytes(b[3..7].try_into().expect("4 bytes")),
            session_id: b[7..23].try_into().expect("16 bytes"),
            config_hash: b[23..55].try_into().expect("32 bytes"),
        })
    }
}

pub fn new_session_id() -> [u8; 16] {
    let mut id = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut id);
    id
}

/// Initiator side: sends HELLO and waits for the echo.
pub fn connect(conn: &mut Conn, hello: &Hello) -> Result<()> {
    conn.send(FrameType::Hello, &hello.encode())?;
    let ack = conn.expect(FrameType::HelloAck)?;
    if ack != hello.session_id {
        return Err(conn.abort(AbortCode::Protocol, "HELLO_ACK does not echo the session id"));
    }
    Ok(())
}

/// Acceptor side: reads HELLO and checks the version and, when given, the config
/// hash. The caller decides on the role and then calls [`acknowledge`].
pub fn receive_hello(conn: &mut Conn, config_hash: Option<&[u8; 32]>) -> Result<Hello> {
    let payload = match conn.expect(FrameType::Hello) {
        Ok(p) => p,
        Err(e @ Error::Aborted { .. }) => return Err(e),
        Err(e) => {
            conn.abort(AbortCode::Protocol, &e.to_string());
            return Err(e);
        }
    };
    let hello = match Hello::decode(&payload) {
        Ok(h) => h,
        Err(e) => return Err(conn.abort(AbortCode::Protocol, &e.to_string())),
    };
    if hello.version != PROTOCOL_VERSION {
        return Err(conn.abort(
            AbortCode::VersionMismatch,
            &format!("protocol version {} not supported, expected {PROTOCOL_VERSION}", hello.version),
        ));
    }
    if let Some(h) = config_hash {
        check_config(conn, &hello, h)?;
    }
    Ok(hello)
}

/// Refuses `hello` with code 2 unless it carries `config_hash`.
pub fn check_config(conn: &mut Conn, hello: &Hello, config_hash: &[u8; 32]) -> Result<()> {
    if hello.config_hash != *config_hash {
        return Err(conn.abort(AbortCode::ConfigMismatch, "config hash differs"));
    }
    Ok(())
}

pub fn acknowledge(conn: &mut Conn, hello: &Hello) -> Result<()> {
    conn.send(FrameType::HelloAck, &hello.session_id)
}

/// Dials `addr`, retrying until `timeout` elapses.
pub fn dial(addr: &str, timeout: Duration) -> Result<Conn> {
    let deadline = Instant::now() + timeout;
    loop {
        let err = match addr.to_socket_addrs() {
            Ok(addrs) => {
                let mut last = None;
                for a in addrs {
                    match TcpStream::connect_timeout(&a, Duration::from_secs(2)) {
                        Ok(s) => return Conn::tcp(s),
                        Err(e) => last = Some(e),
                    }
                }
                last.map(Error::Io).unwrap_or_else(|| Error::Config(format!("{addr} resolves to nothing")))
            }
            Err(e) => return Err(Error::Config(format!("bad address {addr}: {e}"))),
        };
        if Instant::now() >= deadline {
            return Err(err);
        }
        thread::sleep(Duration::from_millis(50));
    }
}

/// Accepts one connection, giving up at `deadline`. The listener must be non-blocking.
pub fn accept_until(listener: &TcpListener, deadline: Instant) -> Result<Option<Conn>> {
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Conn::tcp(s).map(Some);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Ok(None);
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
}
