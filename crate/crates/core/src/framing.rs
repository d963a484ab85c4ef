//! Slot-level codec for the on-air packet structure.
//!
//! A packet is 12 frames. Each frame is 11 header slots followed by 240
//! payload slots. The header reads `1 0 0 0 0 0 x3 x2 x1 x0 1` in pulse
//! symbols (long = 1, short = 0) where `x3..x0` is the frame index, most
//! significant bit first. A payload slot carries a bit pair.
//!
//! One packet holds a 2880-bit key chunk. The 2880 payload slots have room
//! for 5760 bits, so the chunk fills the first 1440 slots (frames 0..5) two
//! bits at a time and the remaining slots carry `00` padding.
//!
//! The byte stream stores one byte per slot:
//!
//! | byte | symbol            |
//! |------|-------------------|
//! | 0    | header, short (0) |
//! | 1    | header, long (1)  |
//! | 2..5 | payload `b0 b1` as `2 + 2*b0 + b1` |

use thiserror::Error;

use crate::bitops::BitVector;

pub const FRAMES_PER_PACKET: usize = 12;
pub const HEADER_SLOTS: usize = 11;
pub const PAYLOAD_SLOTS: usize = 240;
pub const FRAME_SLOTS: usize = HEADER_SLOTS + PAYLOAD_SLOTS;
pub const PACKET_SLOTS: usize = FRAMES_PER_PACKET * FRAME_SLOTS;
pub const PACKET_BITS: usize = 2880;
/// Payload slots that carry key bits; the rest are padding.
pub const USED_PAYLOAD_SLOTS: usize = PACKET_BITS / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    HeaderShort,
    HeaderLong,
    Payload(bool, bool),
}

impl Symbol {
    pub fn to_byte(self) -> u8 {
        match self {
            Symbol::HeaderShort => 0,
            Symbol::HeaderLong => 1,
            Symbol::Payload(a, b) => 2 + 2 * a as u8 + b as u8,
        }
    }

    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0 => Some(Symbol::HeaderShort),
            1 => Some(Symbol::HeaderLong),
            2..=5 => Some(Symbol::Payload((byte - 2) & 2 != 0, (byte - 2) & 1 != 0)),
            _ => None,
        }
    }

    fn header(bit: bool) -> Self {
        if bit {
            Symbol::HeaderLong
        } else {
            Symbol::HeaderShort
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FramingError {
    #[error("packet needs exactly {PACKET_BITS} key bits, got {0}")]
    InputLength(usize),
    #[error("stream truncated: {actual} slots, expected {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid symbol byte {byte} at slot {slot}")]
    InvalidSymbol { slot: usize, byte: u8 },
    #[error("header pattern violated in frame {frame} at header slot {slot}")]
    HeaderPattern { frame: usize, slot: usize },
    #[error("frame discontinuity: expected frame {expected}, found {found}")]
    FrameDiscontinuity { expected: usize, found: usize },
    #[error("header symbol in payload slot {slot} of frame {frame}")]
    MisplacedHeader { frame: usize, slot: usize },
    #[error("non-zero padding in frame {frame}, payload slot {slot}")]
    Padding { frame: usize, slot: usize },
}

/// Header symbols of frame `index`.
pub fn frame_header(index: usize) -> [Symbol; HEADER_SLOTS] {
    let mut h = [Symbol::HeaderShort; HEADER_SLOTS];
    h[0] = Symbol::HeaderLong;
    for i in 0..4 {
        h[6 + i] = Symbol::header((index >> (3 - i)) & 1 == 1);
    }
    h[10] = Symbol::HeaderLong;
    h
}

pub fn encode_packet(key: &BitVector) -> Result<Vec<Symbol>, FramingError> {
    if key.len() != PACKET_BITS {
        return Err(FramingError::InputLength(key.len()));
    }
    let mut out = Vec::with_capacity(PACKET_SLOTS);
    for frame in 0..FRAMES_PER_PACKET {
        out.extend_from_slice(&frame_header(frame));
        for j in 0..PAYLOAD_SLOTS {
            let s = frame * PAYLOAD_SLOTS + j;
            out.push(if s < USED_PAYLOAD_SLOTS {
                Symbol::Payload(key.get(2 * s), key.get(2 * s + 1))
            } else {
                Symbol::Payload(false, false)
            });
        }
    }
    Ok(out)
}

/// Decoded key chunk and the frame numbers read from the headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPacket {
    pub key: BitVector,
    pub frame_numbers: Vec<usize>,
}

pub fn decode_packet(slots: &[Symbol]) -> Result<DecodedPacket, FramingError> {
    if slots.len() < PACKET_SLOTS {
        return Err(FramingError::Truncated { expected: PACKET_SLOTS, actual: slots.len() });
    }
    let mut key = BitVector::zeros(PACKET_BITS);
    let mut frame_numbers = Vec::with_capacity(FRAMES_PER_PACKET);
    for (frame, chunk) in slots[..PACKET_SLOTS].chunks(FRAME_SLOTS).enumerate() {
        let (header, payload) = chunk.split_at(HEADER_SLOTS);
        let mut index = 0usize;
        for (slot, sym) in header.iter().enumerate() {
            let bit = match sym {
                Symbol::HeaderShort => false,
                Symbol::HeaderLong => true,
                Symbol::Payload(..) => return Err(FramingError::HeaderPattern { frame, slot }),
            };
            match slot {
                0 | 10 if !bit => return Err(FramingError::HeaderPattern { frame, slot }),
                1..=5 if bit => return Err(FramingError::HeaderPattern { frame, slot }),
                6..=9 => index = (index << 1) | bit as usize,
                _ => {}
            }
        }
        if index != frame {
            return Err(FramingError::FrameDiscontinuity { expected: frame, found: index });
        }
        frame_numbers.push(index);
        for (j, sym) in payload.iter().enumerate() {
            let Symbol::Payload(a, b) = *sym else {
                return Err(FramingError::MisplacedHeader { frame, slot: j });
            };
            let s = frame * PAYLOAD_SLOTS + j;
            if s < USED_PAYLOAD_SLOTS {
                key.set(2 * s, a);
                key.set(2 * s + 1, b);
            } else if a || b {
                return Err(FramingError::Padding { frame, slot: j });
            }
        }
    }
    Ok(DecodedPacket { key, frame_numbers })
}

pub fn symbols_to_bytes(slots: &[Symbol]) -> Vec<u8> {
    slots.iter().map(|s| s.to_byte()).collect()
}

pub fn bytes_to_symbols(bytes: &[u8]) -> Result<Vec<Symbol>, FramingError> {
    bytes
        .iter()
        .enumerate()
        .map(|(slot, &byte)| Symbol::from_byte(byte).ok_or(FramingError::InvalidSymbol { slot, byte }))
        .collect()
}

/// Byte stream for consecutive packets.
pub fn encode_stream(chunks: &[BitVector]) -> Result<Vec<u8>, FramingError> {
    let mut out = Vec::with_capacity(chunks.len() * PACKET_SLOTS);
    for c in chunks {
        out.extend(encode_packet(c)?.into_iter().map(Symbol::to_byte));
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<Vec<BitVector>, FramingError> {
    let symbols = bytes_to_symbols(bytes)?;
    if symbols.len() % PACKET_SLOTS != 0 {
        let whole = symbols.len() / PACKET_SLOTS;
        return Err(FramingError::Truncated { expected: (whole + 1) * PACKET_SLOTS, actual: symbols.len() });
    }
    symbols.chunks(PACKET_SLOTS).map(|p| decode_packet(p).map(|d| d.key)).collect()
}

/// Splits a key into packet chunks, zero-padding the last one.
pub fn chunk_key(key: &BitVector) -> Vec<BitVector> {
    let mut chunks = Vec::new();
    let mut current = BitVector::zeros(0);
    for bit in key.iter() {
        current.push(bit);
        if current.len() == PACKET_BITS {
            chunks.push(std::mem::replace(&mut current, BitVector::zeros(0)));
        }
    }
    if !current.is_empty() {
        while current.len() < PACKET_BITS {
            current.push(false);
        }
        chunks.push(current);
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_zero_header() {
        let bits: Vec<u8> = frame_header(0).iter().map(|s| s.to_byte()).collect();
        assert_eq!(bits, [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        let bits: Vec<u8> = frame_header(11).iter().map(|s| s.to_byte()).collect();
        assert_eq!(bits, [1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1]);
    }

    #[test]
    fn packet_geometry() {
        let p = encode_packet(&BitVector::zeros(PACKET_BITS)).unwrap();
        assert_eq!(p.len(), 12 * 251);
        assert_eq!(FRAMES_PER_PACKET * PAYLOAD_SLOTS * 2, 5760);
        let payload = p.iter().filter(|s| matches!(s, Symbol::Payload(..))).count();
        assert_eq!(payload, 2880);
        assert!(p.iter().filter(|s| matches!(s, Symbol::Payload(..))).all(|&s| s == Symbol::Payload(false, false)));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = BitVector::random(PACKET_BITS, &mut rng);
        let d = decode_packet(&encode_packet(&key).unwrap()).unwrap();
        assert_eq!(d.key, key);
        assert_eq!(d.frame_numbers, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn wrong_input_length() {
        assert_eq!(encode_packet(&BitVector::zeros(5760)), Err(FramingError::InputLength(5760)));
    }

    #[test]
    fn distinct_errors() {
        let key = BitVector::zeros(PACKET_BITS);
        let p = encode_packet(&key).unwrap();

        let mut bad = p.clone();
        bad[FRAME_SLOTS * 3 + 2] = Symbol::HeaderLong;
        assert_eq!(decode_packet(&bad), Err(FramingError::HeaderPattern { frame: 3, slot: 2 }));

        let mut swapped = p.clone();
        let (a, b) = swapped.split_at_mut(FRAME_SLOTS * 5);
        a[FRAME_SLOTS * 4..].swap_with_slice(&mut b[..FRAME_SLOTS]);
        assert_eq!(decode_packet(&swapped), Err(FramingError::FrameDiscontinuity { expected: 4, found: 5 }));

        assert!(matches!(decode_packet(&p[..100]), Err(FramingError::Truncated { .. })));
        assert_eq!(bytes_to_symbols(&[0, 1, 9]), Err(FramingError::InvalidSymbol { slot: 2, byte: 9 }));

        let mut pad = p.clone();
        pad[PACKET_SLOTS - 1] = Symbol::Payload(true, false);
        assert!(matches!(decode_packet(&pad), Err(FramingError::Padding { frame: 11, .. })));

        let mut mis = p;
        mis[HEADER_SLOTS] = Symbol::HeaderShort;
        assert_eq!(decode_packet(&mis), Err(FramingError::MisplacedHeader { frame: 0, slot: 0 }));
    }

    #[test]
    fn every_single_header_corruption_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = encode_packet(&BitVector::random(PACKET_BITS, &mut rng)).unwrap();
        let alphabet: Vec<Symbol> = (0..6).map(|b| Symbol::from_byte(b).unwrap()).collect();
        for frame in 0..FRAMES_PER_PACKET {
            for slot in 0..HEADER_SLOTS {
                let pos = frame * FRAME_SLOTS + slot;
                for &s in &alphabet {
                    if s == p[pos] {
                        continue;
                    }
                    let mut bad = p.clone();
                    bad[pos] = s;
                    assert!(decode_packet(&bad).is_err(), "frame {frame} slot {slot} -> {s:?}");
                }
            }
        }
    }

    #[test]
    fn stream_and_chunking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let key = BitVector::random(PACKET_BITS * 2 + 17, &mut rng);
        let chunks = chunk_key(&key);
        assert_eq!(chunks.len(), 3);
        let bytes = encode_stream(&chunks).unwrap();
        assert_eq!(bytes.len(), 3 * PACKET_SLOTS);
        assert_eq!(decode_stream(&bytes).unwrap(), chunks);
        assert!(matches!(decode_stream(&bytes[..bytes.len() - 1]), Err(FramingError::Truncated { .. })));
    }
}
