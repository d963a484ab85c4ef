//! Classical messages between the endpoints and the transports that carry
//! them.
//!
//! Every message travels as one frame:
//!
//! ```text
//! length: u32 big-endian (covers tag + payload)
//! tag:    u8
//! payload
//! ```
//!
//! Integers inside payloads are big-endian. A bit string is a `u32` bit
//! count followed by its canonical little-endian packing. The channel is
//! assumed authenticated; nothing here protects integrity.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

use thiserror::Error;

use crate::bitops::{BitOpsError, BitVector};

/// Largest frame either side accepts.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer disconnected")]
    Disconnected,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("frame of {0} bytes exceeds limit")]
    Oversize(usize),
    #[error("malformed {what} payload")]
    Malformed { what: &'static str },
    #[error("unexpected message: expected {expected}, got {got}")]
    Unexpected { expected: &'static str, got: &'static str },
    #[error(transparent)]
    Bits(#[from] BitOpsError),
}

/// Reasons an endpoint gives when it stops the session early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AbortReason {
    SlotBudget = 1,
    Estimation = 2,
    Reconciliation = 3,
    Verification = 4,
}

impl AbortReason {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => AbortReason::SlotBudget,
            2 => AbortReason::Estimation,
            3 => AbortReason::Reconciliation,
            4 => AbortReason::Verification,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Bob: which slots of a batch clicked and his bases for those slots.
    Detected { batch: u32, mask: BitVector, bases: BitVector },
    /// Alice: her bases for the detected slots of the batch.
    BasisReveal { batch: u32, bases: BitVector },
    /// Alice: her estimation-basis bits.
    EstimationBits { z: BitVector },
    /// Bob: number of estimation errors and whether to go on.
    EstimationResult { errors: u32, proceed: bool },
    ParityRequest { iteration: u16 },
    Parities { iteration: u16, bits: BitVector },
    SyndromeRequest { iteration: u16, blocks: Vec<u32> },
    Syndromes { iteration: u16, values: Vec<u16> },
    VerifyTag { tag: BitVector },
    VerifyResult { ok: bool },
    Abort { reason: AbortReason },
    Finish { ell_gs: u64, ell_ps: u64 },
    /// Bob: Winnow is over; the number of bits he asked Alice to disclose.
    ReconciliationDone { leakage: u64 },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Detected { .. } => 1,
            Message::BasisReveal { .. } => 2,
            Message::EstimationBits { .. } => 3,
            Message::EstimationResult { .. } => 4,
            Message::ParityRequest { .. } => 5,
            Message::Parities { .. } => 6,
            Message::SyndromeRequest { .. } => 7,
            Message::Syndromes { .. } => 8,
            Message::VerifyTag { .. } => 9,
            Message::VerifyResult { .. } => 10,
            Message::Abort { .. } => 11,
            Message::Finish { .. } => 12,
            Message::ReconciliationDone { .. } => 13,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Detected { .. } => "Detected",
            Message::BasisReveal { .. } => "BasisReveal",
            Message::EstimationBits { .. } => "EstimationBits",
            Message::EstimationResult { .. } => "EstimationResult",
            Message::ParityRequest { .. } => "ParityRequest",
            Message::Parities { .. } => "Parities",
            Message::SyndromeRequest { .. } => "SyndromeRequest",
            Message::Syndromes { .. } => "Syndromes",
            Message::VerifyTag { .. } => "VerifyTag",
            Message::VerifyResult { .. } => "VerifyResult",
            Message::Abort { .. } => "Abort",
            Message::Finish { .. } => "Finish",
            Message::ReconciliationDone { .. } => "ReconciliationDone",
        }
    }

    /// Full frame: length prefix, tag, payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.tag()];
        let w = &mut body;
        match self {
            Message::Detected { batch, mask, bases } => {
                put_u32(w, *batch);
                put_bits(w, mask);
                put_bits(w, bases);
            }
            Message::BasisReveal { batch, bases } => {
                put_u32(w, *batch);
                put_bits(w, bases);
            }
            Message::EstimationBits { z } => put_bits(w, z),
            Message::EstimationResult { errors, proceed } => {
                put_u32(w, *errors);
                w.push(*proceed as u8);
            }
            Message::ParityRequest { iteration } => put_u16(w, *iteration),
            Message::Parities { iteration, bits } => {
                put_u16(w, *iteration);
                put_bits(w, bits);
            }
            Message::SyndromeRequest { iteration, blocks } => {
                put_u16(w, *iteration);
                put_u32(w, blocks.len() as u32);
                blocks.iter().for_each(|&b| put_u32(w, b));
            }
            Message::Syndromes { iteration, values } => {
                put_u16(w, *iteration);
                put_u32(w, values.len() as u32);
                values.iter().for_each(|&v| put_u16(w, v));
            }
            Message::VerifyTag { tag } => put_bits(w, tag),
            Message::VerifyResult { ok } => w.push(*ok as u8),
            Message::Abort { reason } => w.push(*reason as u8),
            Message::Finish { ell_gs, ell_ps } => {
                w.extend_from_slice(&ell_gs.to_be_bytes());
                w.extend_from_slice(&ell_ps.to_be_bytes());
            }
            Message::ReconciliationDone { leakage } => w.extend_from_slice(&leakage.to_be_bytes()),
        }
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Parses one complete frame (with its length prefix).
    pub fn decode(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Cursor { buf: frame, what: "frame" };
        let len = r.u32()? as usize;
        if len != frame.len() - 4 || len == 0 {
            return Err(WireError::Malformed { what: "frame length" });
        }
        Self::decode_body(&frame[4..])
    }

    fn decode_body(body: &[u8]) -> Result<Self, WireError> {
        let Some(&tag) = body.first() else {
            return Err(WireError::Malformed { what: "empty frame" });
        };
        let mut r = Cursor { buf: &body[1..], what: "message" };
        let msg = match tag {
            1 => Message::Detected { batch: r.u32()?, mask: r.bits()?, bases: r.bits()? },
            2 => Message::BasisReveal { batch: r.u32()?, bases: r.bits()? },
            3 => Message::EstimationBits { z: r.bits()? },
            4 => Message::EstimationResult { errors: r.u32()?, proceed: r.flag()? },
            5 => Message::ParityRequest { iteration: r.u16()? },
            6 => Message::Parities { iteration: r.u16()?, bits: r.bits()? },
            7 => {
                let iteration = r.u16()?;
                let count = r.u32()? as usize;
                let blocks = (0..count).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Message::SyndromeRequest { iteration, blocks }
            }
            8 => {
                let iteration = r.u16()?;
                let count = r.u32()? as usize;
                let values = (0..count).map(|_| r.u16()).collect::<Result<_, _>>()?;
                Message::Syndromes { iteration, values }
            }
            9 => Message::VerifyTag { tag: r.bits()? },
            10 => Message::VerifyResult { ok: r.flag()? },
            11 => {
                let v = r.u8()?;
                Message::Abort { reason: AbortReason::from_u8(v).ok_or(WireError::Malformed { what: "abort reason" })? }
            }
            12 => Message::Finish { ell_gs: r.u64()?, ell_ps: r.u64()? },
            13 => Message::ReconciliationDone { leakage: r.u64()? },
            t => return Err(WireError::UnknownTag(t)),
        };
        if !r.buf.is_empty() {
            return Err(WireError::Malformed { what: "trailing bytes" });
        }
        Ok(msg)
    }
}

fn put_u16(w: &mut Vec<u8>, v: u16) {
    w.extend_from_slice(&v.to_be_bytes());
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_be_bytes());
}

fn put_bits(w: &mut Vec<u8>, bits: &BitVector) {
    put_u32(w, bits.len() as u32);
    w.extend_from_slice(&bits.to_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed { what: self.what });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Malformed { what: "flag" }),
        }
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn bits(&mut self) -> Result<BitVector, WireError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len.div_ceil(8))?;
        Ok(BitVector::from_bytes(bytes, len)?)
    }
}

/// Blocking, ordered, reliable message pipe to the peer.
pub trait Transport: Send {
    fn send(&mut self, msg: &Message) -> Result<(), WireError>;
    fn recv(&mut self) -> Result<Message, WireError>;
}

/// In-process transport; frames are encoded exactly as on a socket.
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemoryTransport {
    pub fn pair() -> (Self, Self) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (Self { tx: a_tx, rx: a_rx }, Self { tx: b_tx, rx: b_rx })
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        self.tx.send(msg.encode()).map_err(|_| WireError::Disconnected)
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let frame = self.rx.recv().map_err(|_| WireError::Disconnected)?;
        Message::decode(&frame)
    }
}

/// Length-prefixed framing over any byte stream, e.g. a `TcpStream`.
pub struct StreamTransport<S> {
    stream: S,
}

impl<S: Read + Write + Send> StreamTransport<S> {
    pub fn new(stream: S) -> Self {
        Self { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

/// Reads one frame body (tag + payload) from `r`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(WireError::Disconnected),
        other => other?,
    }
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 {
        return Err(WireError::Malformed { what: "empty frame" });
    }
    if len > MAX_FRAME {
        return Err(WireError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

impl<S: Read + Write + Send> Transport for StreamTransport<S> {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        self.stream.write_all(&msg.encode())?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let body = read_frame(&mut self.stream)?;
        Message::decode_body(&body)
    }
}

/// Transport wrapper that appends every frame it sends or receives to a log.
///
/// Each entry is a direction byte (`0` sent, `1` received) followed by the
/// encoded frame.
pub struct Recorded<T> {
    inner: T,
    log: Vec<u8>,
}

impl<T: Transport> Recorded<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, log: Vec::new() }
    }

    pub fn log(&self) -> &[u8] {
        &self.log
    }

    pub fn into_log(self) -> Vec<u8> {
        self.log
    }
}

impl<T: Transport> Transport for Recorded<T> {
    fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        self.log.push(0);
        self.log.extend_from_slice(&msg.encode());
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<Message, WireError> {
        let msg = self.inner.recv()?;
        self.log.push(1);
        self.log.extend_from_slice(&msg.encode());
        Ok(msg)
    }
}
