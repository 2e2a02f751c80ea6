//! Length-prefixed frames over an ordered byte stream.
//!
//! A frame is `length (u32 BE) | type (u8) | payload`, where `length` counts the
//! type byte and the payload.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::os::unix::net::UnixStream;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::net::AbortCode;

/// Largest allowed `length` field.
pub const MAX_FRAME_LEN: usize = 16 << 20;

/// Largest chunk of bulk data placed in one frame, leaving room for chunk headers.
pub const MAX_CHUNK: usize = MAX_FRAME_LEN - 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameType {
    Hello = 0x01,
    HelloAck = 0x02,
    ShareUpload = 0x03,
    TripleBlock = 0x04,
    MpcMsg = 0x05,
    OutputShare = 0x06,
    Abort = 0x07,
    Bye = 0x08,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => FrameType::Hello,
            0x02 => FrameType::HelloAck,
            0x03 => FrameType::ShareUpload,
            0x04 => FrameType::TripleBlock,
            0x05 => FrameType::MpcMsg,
            0x06 => FrameType::OutputShare,
            0x07 => FrameType::Abort,
            0x08 => FrameType::Bye,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

pub fn write_frame<W: Write>(w: &mut W, kind: FrameType, payload: &[u8]) -> Result<()> {
    let len = payload.len() + 1;
    if len > MAX_FRAME_LEN {
        return Err(Error::Framing(format!("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte limit")));
    }
    w.write_all(&(len as u32).to_be_bytes())?;
    w.write_all(&[kind as u8])?;
    w.write_all(payload)?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the first byte is reported as a
/// protocol error; an end of stream inside a frame as a framing error.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut head = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Err(Error::Protocol("connection closed by peer".into())),
            Ok(0) => return Err(Error::Framing("truncated frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(head) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Framing(format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Framing(format!("truncated frame: expected {len} bytes")),
        _ => Error::Io(e),
    })?;
    let kind = FrameType::from_byte(body[0]).ok_or_else(|| Error::Framing(format!("unknown frame type {:#04x}", body[0])))?;
    body.remove(0);
    Ok(Frame { kind, payload: body })
}

/// One observed frame: direction, type byte and `length` field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub outbound: bool,
    pub kind: u8,
    pub len: u32,
    pub payload: Option<Vec<u8>>,
}

/// Shared log of frames crossing one or more connections.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
    keep_payloads: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    /// Also keeps a copy of every payload.
    pub fn with_payloads() -> Self {
        Transcript { entries: Arc::default(), keep_payloads: true }
    }

    fn record(&self, outbound: bool, kind: u8, payload: &[u8]) {
        let e = TranscriptEntry {
            outbound,
            kind,
            len: payload.len() as u32 + 1,
            payload: self.keep_payloads.then(|| payload.to_vec()),
        };
        self.entries.lock().expect("transcript lock").push(e);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }

    /// `(direction, type, length)` of every frame, in order.
    pub fn shape(&self) -> Vec<(bool, u8, u32)> {
        self.entries().iter().map(|e| (e.outbound, e.kind, e.len)).collect()
    }

    /// Bytes on the wire including the four-byte length prefixes.
    pub fn total_bytes(&self) -> u64 {
        self.entries().iter().map(|e| e.len as u64 + 4).sum()
    }
}

/// A connected byte stream that can be split into independent halves.
#[derive(Debug)]
pub enum Stream {
    Tcp(TcpStream),
    Unix(UnixStream),
}

impl Stream {
    pub fn try_clone(&self) -> io::Result<Stream> {
        Ok(match self {
            Stream::Tcp(s) => Stream::Tcp(s.try_clone()?),
            Stream::Unix(s) => Stream::Unix(s.try_clone()?),
        })
    }

    pub fn shutdown(&self) {
        let _ = match self {
            Stream::Tcp(s) => s.shutdown(Shutdown::Both),
            Stream::Unix(s) => s.shutdown(Shutdown::Both),
        };
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            Stream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            Stream::Unix(s) => s.flush(),
        }
    }
}

pub struct FrameReader {
    inner: BufReader<Stream>,
    transcript: Option<Transcript>,
}

impl FrameReader {
    pub fn recv(&mut self) -> Result<Frame> {
        let f = read_frame(&mut self.inner)?;
        if let Some(t) = &self.transcript {
            t.record(false, f.kind as u8, &f.payload);
        }
        Ok(f)
    }
}

pub struct FrameWriter {
    inner: BufWriter<Stream>,
    transcript: Option<Transcript>,
}

impl FrameWriter {
    pub fn send(&mut self, kind: FrameType, payload: &[u8]) -> Result<()> {
        write_frame(&mut self.inner, kind, payload)?;
        self.inner.flush()?;
        if let Some(t) = &self.transcript {
            t.record(true, kind as u8, payload);
        }
        Ok(())
    }
}

/// A framed duplex connection.
pub struct Conn {
    pub reader: FrameReader,
    pub writer: FrameWriter,
    control: Stream,
}

impl Conn {
    pub fn new(stream: Stream) -> Result<Conn> {
        if let Stream::Tcp(s) = &stream {
            s.set_nodelay(true)?;
        }
        let r = stream.try_clone()?;
        let w = stream.try_clone()?;
        Ok(Conn {
            reader: FrameReader { inner: BufReader::with_capacity(1 << 16, r), transcript: None },
            writer: FrameWriter { inner: BufWriter::with_capacity(1 << 16, w), transcript: None },
            control: stream,
        })
    }

    pub fn tcp(stream: TcpStream) -> Result<Conn> {
        Conn::new(Stream::Tcp(stream))
    }

    pub fn unix(stream: UnixStream) -> Result<Conn> {
        Conn::new(Stream::Unix(stream))
    }

    /// Two connected ends in one process.
    pub fn pair() -> Result<(Conn, Conn)> {
        let (a, b) = UnixStream::pair()?;
        Ok((Conn::unix(a)?, Conn::unix(b)?))
    }

    pub fn record_into(mut self, t: &Transcript) -> Self {
        self.reader.transcript = Some(t.clone());
        self.writer.transcript = Some(t.clone());
        self
    }

    pub fn send(&mut self, kind: FrameType, payload: &[u8]) -> Result<()> {
        self.writer.send(kind, payload)
    }

    pub fn recv(&mut self) -> Result<Frame> {
        self.reader.recv()
    }

    /// Receives a frame of type `kind`. An ABORT from the peer becomes
    /// [`Error::Aborted`]; any other type is a protocol error.
    pub fn expect(&mut self, kind: FrameType) -> Result<Vec<u8>> {
        let f = self.recv()?;
        if f.kind == kind {
            Ok(f.payload)
        } else {
            Err(unexpected(f, kind))
        }
    }

    /// Sends ABORT with `code` and `reason`, ignoring transport failures, and
    /// returns the matching error.
    pub fn abort(&mut self, code: AbortCode, reason: &str) -> Error {
        let mut p = vec![code as u8];
        p.extend_from_slice(reason.as_bytes());
        let _ = self.send(FrameType::Abort, &p);
        Error::Aborted { code, reason: reason.to_string() }
    }

    /// Handle that can tear the connection down from another thread.
    pub fn control(&self) -> Result<Stream> {
        Ok(self.control.try_clone()?)
    }

    pub fn shutdown(&self) {
        self.control.shutdown();
    }

    pub fn into_parts(self) -> (FrameReader, FrameWriter, Stream) {
        (self.reader, self.writer, self.control)
    }
}

/// The error for receiving `f` while waiting for `wanted`.
pub fn unexpected(f: Frame, wanted: FrameType) -> Error {
    if f.kind == FrameType::Abort {
        let code = f.payload.first().and_then(|&c| AbortCode::from_byte(c)).unwrap_or(AbortCode::Protocol);
        let reason = String::from_utf8_lossy(f.payload.get(1..).unwrap_or_default()).into_owned();
        Error::Aborted { code, reason }
    } else {
        Error::Protocol(format!("expected {wanted:?}, got {:?}", f.kind))
    }
}

/// Splits `data` into chunks of at most [`MAX_CHUNK`] bytes; empty data is one empty chunk.
pub fn chunks(data: &[u8]) -> impl Iterator<Item = (&[u8], bool)> {
    let n = data.len().div_ceil(MAX_CHUNK).max(1);
    (0..n).map(move |i| {
        let end = ((i + 1) * MAX_CHUNK).min(data.len());
        (&data[(i * MAX_CHUNK).min(data.len())..end], i + 1 < n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameType::MpcMsg, b"abc").unwrap();
        assert_eq!(buf, [0, 0, 0, 4, 5, b'a', b'b', b'c']);
        let f = read_frame(&mut buf.as_slice()).unwrap();
        assert_eq!(f, Frame { kind: FrameType::MpcMsg, payload: b"abc".to_vec() });
    }

    #[test]
    fn truncated_and_bad_frames_are_framing_errors() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameType::ShareUpload, &[7; 100]).unwrap();
        assert!(matches!(read_frame(&mut &buf[..50]), Err(Error::Framing(_))));
        assert!(matches!(read_frame(&mut &buf[..2]), Err(Error::Framing(_))));
        assert!(matches!(read_frame(&mut &[0u8, 0, 0, 0][..]), Err(Error::Framing(_))));
        assert!(matches!(read_frame(&mut &[0u8, 0, 0, 1, 0x09][..]), Err(Error::Framing(_))));
        let huge = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(read_frame(&mut &huge[..]), Err(Error::Framing(_))));
        assert!(matches!(read_frame(&mut &[][..]), Err(Error::Protocol(_))));
    }

    #[test]
    fn oversized_payload_is_refused() {
        let mut sink = Vec::new();
        assert!(write_frame(&mut sink, FrameType::MpcMsg, &vec![0; MAX_FRAME_LEN]).is_err());
        assert!(write_frame(&mut sink, FrameType::MpcMsg, &vec![0; MAX_FRAME_LEN - 1]).is_ok());
    }

    #[test]
    fn chunking_covers_data() {
        assert_eq!(chunks(&[]).collect::<Vec<_>>(), vec![(&[][..], false)]);
        let data = vec![1u8; MAX_CHUNK + 5];
        let parts: Vec<_> = chunks(&data).collect();
        assert_eq!(parts.len(), 2);
        assert_eq!((parts[0].0.len(), parts[0].1), (MAX_CHUNK, true));
        assert_eq!((parts[1].0.len(), parts[1].1), (5, false));
    }

    #[test]
    fn transcript_records_both_directions() {
        let t = Transcript::new();
        let (a, mut b) = Conn::pair().unwrap();
        let mut a = a.record_into(&t);
        a.send(FrameType::Bye, &[]).unwrap();
        assert_eq!(b.recv().unwrap().kind, FrameType::Bye);
        b.send(FrameType::HelloAck, &[1; 16]).unwrap();
        a.expect(FrameType::HelloAck).unwrap();
        assert_eq!(t.shape(), vec![(true, 8, 1), (false, 2, 17)]);
        assert_eq!(t.total_bytes(), 5 + 21);
    }

    #[test]
    fn abort_frames_surface_as_errors() {
        let (mut a, mut b) = Conn::pair().unwrap();
        let e = a.abort(AbortCode::ConfigMismatch, "config differs");
        assert!(matches!(e, Error::Aborted { code: AbortCode::ConfigMismatch, .. }));
        match b.expect(FrameType::HelloAck) {
            Err(Error::Aborted { code, reason }) => {
                assert_eq!(code, AbortCode::ConfigMismatch);
                assert_eq!(reason, "config differs");
            }
            other => panic!("{other:?}"),
        }
    }
}
