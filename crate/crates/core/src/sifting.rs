//! Asymmetric-basis prepare-and-measure sifting and parameter estimation.
//!
//! Both parties pick the X basis with probability `p_X = 1 / (1 + sqrt(k/n))`,
//! which minimises the expected number of detections needed to collect `n`
//! matched X bits and `k` matched Z bits. Slots are accumulated until both
//! quotas are met, then exactly `n` and `k` matched positions are chosen
//! uniformly with the public stream.

use rand::Rng;
use thiserror::Error;

use crate::bitops::{BitOpsError, BitVector};
use crate::channel::{Basis, ChannelModel, Detection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiftError {
    #[error("quotas must be positive (n={n}, k={k})")]
    ZeroQuota { n: usize, k: usize },
    #[error("invalid protocol parameter: {0}")]
    InvalidParams(String),
    #[error("quotas not met after {0} slots")]
    SlotBudgetExceeded(u64),
    #[error("malformed session record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Bits(#[from] BitOpsError),
}

/// `(p_X, p_Z)` satisfying `p_Z^2 / p_X^2 = k / n`.
pub fn basis_probs_from_quota(n: usize, k: usize) -> Result<(f64, f64), SiftError> {
    if n == 0 || k == 0 {
        return Err(SiftError::ZeroQuota { n, k });
    }
    let p_x = 1.0 / (1.0 + (k as f64 / n as f64).sqrt());
    Ok((p_x, 1.0 - p_x))
}

/// Estimation quota implied by a fixed `p_Z`: `round(n (p_Z / p_X)^2)`, at least 1.
pub fn quota_from_pz(n: usize, p_z: f64) -> Result<usize, SiftError> {
    if !(p_z > 0.0 && p_z < 1.0) {
        return Err(SiftError::InvalidParams(format!("p_Z = {p_z} must lie in (0, 1)")));
    }
    let ratio = p_z / (1.0 - p_z);
    Ok(((n as f64) * ratio * ratio).round().max(1.0) as usize)
}

/// Expected detections to fill both quotas, `n + k + 2 sqrt(nk)`.
pub fn expected_detections(n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    n + k + 2.0 * (n * k).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub n: usize,
    pub k: usize,
    pub p_x: f64,
    pub p_z: f64,
    pub q_tol_z: f64,
    pub q_max_x: f64,
}

impl ProtocolParams {
    pub fn new(n: usize, k: usize, q_tol_z: f64, q_max_x: f64) -> Result<Self, SiftError> {
        let (p_x, p_z) = basis_probs_from_quota(n, k)?;
        for (name, v) in [("Q_tol_Z", q_tol_z), ("Q_max_X", q_max_x)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(SiftError::InvalidParams(format!("{name} = {v} must lie in (0, 0.5)")));
            }
        }
        Ok(Self { n, k, p_x, p_z, q_tol_z, q_max_x })
    }

    /// Parameters for a fixed `p_Z`; `k` follows from the quota relation.
    pub fn from_pz(n: usize, p_z: f64, q_tol_z: f64, q_max_x: f64) -> Result<Self, SiftError> {
        Self::new(n, quota_from_pz(n, p_z)?, q_tol_z, q_max_x)
    }

    pub fn basis_prob(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.p_x,
            Basis::Z => self.p_z,
        }
    }

    /// Draws a basis with the protocol's bias.
    pub fn draw_basis<R: Rng + ?Sized>(&self, rng: &mut R) -> Basis {
        if rng.gen::<f64>() < self.p_x {
            Basis::X
        } else {
            Basis::Z
        }
    }

    /// Slot guard for [`run_sifting`]: `100 M(n, k) / eta`.
    pub fn slot_budget(&self, detection: f64) -> u64 {
        if detection <= 0.0 {
            return 0;
        }
        (100.0 * expected_detections(self.n, self.k) / detection).ceil() as u64
    }
}

/// Public per-slot classification.
///
/// Both endpoints feed it the announced detection flag and both bases; each
/// keeps its own bits alongside.
#[derive(Debug, Clone, Default)]
pub struct SiftTally {
    pub sent: u64,
    pub received: u64,
    pub x_matches: usize,
    pub z_matches: usize,
}

impl SiftTally {
    /// Records one slot and returns the matched basis, if any.
    pub fn record(&mut self, detected: bool, alice: Basis, bob: Basis) -> Option<Basis> {
        self.sent += 1;
        if !detected {
            return None;
        }
        self.received += 1;
        if alice != bob {
            return None;
        }
        match alice {
            Basis::X => self.x_matches += 1,
            Basis::Z => self.z_matches += 1,
        }
        Some(alice)
    }

    pub fn quotas_met(&self, n: usize, k: usize) -> bool {
        self.x_matches >= n && self.z_matches >= k
    }
}

/// `keep` sorted positions out of `0..total`, uniform, via a partial
/// Fisher-Yates shuffle.
pub fn subsample_indices<R: Rng + ?Sized>(total: usize, keep: usize, rng: &mut R) -> Vec<usize> {
    assert!(keep <= total, "cannot keep {keep} of {total}");
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..keep {
        let j = rng.gen_range(i..total);
        pool.swap(i, j);
    }
    pool.truncate(keep);
    pool.sort_unstable();
    pool
}

/// Outcome of the quantum phase after sifting.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub x: BitVector,
    pub x_prime: BitVector,
    pub z: BitVector,
    pub z_prime: BitVector,
    pub sent_count: u64,
    pub received_count: u64,
    pub empirical_q_z: f64,
}

const RECORD_MAGIC: &[u8; 4] = b"QKSR";
const RECORD_VERSION: u8 = 1;

#[repr(u8)]
enum RecordTag {
    X = 1,
    XPrime = 2,
    Z = 3,
    ZPrime = 4,
    Sent = 5,
    Received = 6,
}

impl SessionRecord {
    pub fn from_strings(
        x: BitVector,
        x_prime: BitVector,
        z: BitVector,
        z_prime: BitVector,
        sent_count: u64,
        received_count: u64,
    ) -> Result<Self, SiftError> {
        if x.len() != x_prime.len() || z.len() != z_prime.len() {
            return Err(SiftError::Malformed("paired strings differ in length".into()));
        }
        let empirical_q_z = if z.is_empty() { 0.0 } else { z.hamming_distance(&z_prime) as f64 / z.len() as f64 };
        Ok(Self { x, x_prime, z, z_prime, sent_count, received_count, empirical_q_z })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    /// Tagged binary blob: magic `QKSR`, version byte, then records of
    /// `tag:u8, bit_len:u32le, payload` for the four strings (canonical bit
    /// packing) followed by `tag:u8, u64le` for the two counters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RECORD_MAGIC);
        out.push(RECORD_VERSION);
        for (tag, bits) in [
            (RecordTag::X, &self.x),
            (RecordTag::XPrime, &self.x_prime),
            (RecordTag::Z, &self.z),
            (RecordTag::ZPrime, &self.z_prime),
        ] {
            out.push(tag as u8);
            out.extend_from_slice(&(bits.len() as u32).to_le_bytes());
            out.extend_from_slice(&bits.to_bytes());
        }
        for (tag, v) in [(RecordTag::Sent, self.sent_count), (RecordTag::Received, self.received_count)] {
            out.push(tag as u8);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SiftError> {
        let bad = |m: &str| SiftError::Malformed(m.to_string());
        if bytes.len() < 5 || &bytes[..4] != RECORD_MAGIC {
            return Err(bad("missing magic"));
        }
        if bytes[4] != RECORD_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut pos = 5;
        let mut strings: [Option<BitVector>; 4] = Default::default();
        let mut counters = [None::<u64>; 2];
        while pos < bytes.len() {
            let tag = bytes[pos];
            pos += 1;
            match tag {
                1..=4 => {
                    let len_bytes = bytes.get(pos..pos + 4).ok_or_else(|| bad("truncated length"))?;
                    let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
                    pos += 4;
                    let nbytes = len.div_ceil(8);
                    let payload = bytes.get(pos..pos + nbytes).ok_or_else(|| bad("truncated bits"))?;
                    pos += nbytes;
                    strings[tag as usize - 1] = Some(BitVector::from_bytes(payload, len)?);
                }
                5 | 6 => {
                    let v = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated counter"))?;
                    counters[tag as usize - 5] = Some(u64::from_le_bytes(v.try_into().unwrap()));
                    pos += 8;
                }
                other => return Err(SiftError::Malformed(format!("unknown tag {other}"))),
            }
        }
        let [x, xp, z, zp] = strings;
        let missing = || bad("missing field");
        Self::from_strings(
            x.ok_or_else(missing)?,
            xp.ok_or_else(missing)?,
            z.ok_or_else(missing)?,
            zp.ok_or_else(missing)?,
            counters[0].ok_or_else(missing)?,
            counters[1].ok_or_else(missing)?,
        )
    }
}

/// Runs the quantum phase in one process with a single stream.
///
/// Per slot: Alice's bit, Alice's basis, Bob's basis, then the channel draws.
/// After the quotas are met, `n` X positions then `k` Z positions are chosen
/// from the same stream.
pub fn run_sifting<R: Rng + ?Sized>(
    params: &ProtocolParams,
    model: &ChannelModel,
    rng: &mut R,
) -> Result<SessionRecord, SiftError> {
    let budget = params.slot_budget(model.detection());
    let mut tally = SiftTally::default();
    let (mut xa, mut xb, mut za, mut zb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    while !tally.quotas_met(params.n, params.k) {
        if tally.sent >= budget {
            return Err(SiftError::SlotBudgetExceeded(tally.sent));
        }
        let bit: bool = rng.gen();
        let alice = params.draw_basis(rng);
        let bob = params.draw_basis(rng);
        let outcome = model.transmit(bit, alice, bob, rng);
        let detected = matches!(outcome, Detection::Bit(_));
        if let (Some(basis), Detection::Bit(measured)) = (tally.record(detected, alice, bob), outcome) {
            match basis {
                Basis::X => {
                    xa.push(bit);
                    xb.push(measured);
                }
                Basis::Z => {
                    za.push(bit);
                    zb.push(measured);
                }
            }
        }
    }
    let xi = subsample_indices(xa.len(), params.n, rng);
    let zi = subsample_indices(za.len(), params.k, rng);
    let pick = |v: &[bool], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<BitVector>();
    SessionRecord::from_strings(
        pick(&xa, &xi),
        pick(&xb, &xi),
        pick(&za, &zi),
        pick(&zb, &zi),
        tally.sent,
        tally.received,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationDecision {
    Continue,
    Abort,
}

/// Aborts iff the Z-basis error fraction strictly exceeds `Q_tol_Z`.
///
/// Only `Z` and `Z'` are read.
pub fn estimate_and_test(record: &SessionRecord, params: &ProtocolParams) -> EstimationDecision {
    test_estimation(&record.z, &record.z_prime, params.q_tol_z)
}

pub fn test_estimation(z: &BitVector, z_prime: &BitVector, q_tol_z: f64) -> EstimationDecision {
    let q = if z.is_empty() { 0.0 } else { z.hamming_distance(z_prime) as f64 / z.len() as f64 };
    if q > q_tol_z {
        EstimationDecision::Abort
    } else {
        EstimationDecision::Continue
    }
}
