//! Winnow information reconciliation.
//!
//! Each iteration permutes the key with public randomness, cuts it into
//! blocks of `2^m` bits, exchanges block parities and, for every block whose
//! parity disagrees, the `m`-bit extended-Hamming syndrome. Bob flips the bit
//! the syndrome difference points at. Every disclosed bit is logged in the
//! transcript and counted as leakage; nothing is discarded.
//!
//! The schedule (block size per iteration) is chosen offline from an
//! i.i.d.-error recursion of the expected residual error rate and leakage.

use rand::Rng;
use thiserror::Error;

use crate::bitops::{block_syndrome, syndrome_width, BitOpsError, BitVector};
use crate::numerics::{binom_cdf, from_u64, lit, NumericsError, Probability, Scalar};

/// Block sizes Winnow may use.
pub const BLOCK_SIZES: [usize; 6] = [8, 16, 32, 64, 128, 256];
/// Most iterations a schedule may contain.
pub const MAX_ITERATIONS: usize = 6;
/// Resolution of the `Q_max_X` threshold grid.
pub const QMAX_GRID_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("no schedule of at most {MAX_ITERATIONS} iterations reaches BER {target:e} at Q_max_X = {q_max}")]
    Infeasible { q_max: f64, target: f64 },
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("oracle returned {actual} answers, expected {expected}")]
    OracleShape { expected: usize, actual: usize },
    #[error(transparent)]
    Bits(#[from] BitOpsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinnowSchedule {
    block_sizes: Vec<usize>,
    permute_between: bool,
}

impl WinnowSchedule {
    pub fn new(block_sizes: Vec<usize>, permute_between: bool) -> Result<Self, ReconError> {
        if block_sizes.is_empty() || block_sizes.len() > MAX_ITERATIONS {
            return Err(ReconError::Schedule(format!(
                "{} iterations, expected 1..={MAX_ITERATIONS}",
                block_sizes.len()
            )));
        }
        if let Some(bad) = block_sizes.iter().find(|s| !BLOCK_SIZES.contains(s)) {
            return Err(ReconError::Schedule(format!("unsupported block size {bad}")));
        }
        Ok(Self { block_sizes, permute_between })
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn permute_between(&self) -> bool {
        self.permute_between
    }
}

/// Result of [`choose_qmax`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmaxChoice<T = f64> {
    pub q_max: T,
    /// No grid point below 1/2 met the tail target; `q_max` is 1/2.
    pub fallback: bool,
}

/// Smallest grid threshold `t > q_bar` with `P[Q_emp >= t] < p_fail / 2`.
///
/// `Q_emp` is the error fraction of `n` i.i.d. bits at rate `q_bar`.
pub fn choose_qmax<T: Scalar>(q_bar: T, n: usize, p_fail: T) -> Result<QmaxChoice<T>, ReconError> {
    let q = Probability::new(q_bar)?;
    let target = p_fail / lit(2.0);
    let steps = (0.5 / QMAX_GRID_STEP).round() as u64;
    let n64 = n as u64;
    let tail = |i: u64| -> Result<T, ReconError> {
        // ceil(t n) with t = i * step, in exact integer arithmetic
        let count = (i * n64).div_ceil(steps * 2);
        Ok(T::one() - binom_cdf(count.saturating_sub(1).min(n64), n64, q)?)
    };
    let first = (q_bar.to_f64().unwrap_or(0.0) / QMAX_GRID_STEP).floor() as u64 + 1;
    let grid = |i: u64| lit::<T>(i as f64 * QMAX_GRID_STEP);
    if first > steps || tail(steps)? >= target {
        return Ok(QmaxChoice { q_max: lit(0.5), fallback: true });
    }
    let (mut lo, mut hi) = (first, steps);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if tail(mid)? < target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(QmaxChoice { q_max: grid(lo), fallback: false })
}

/// Expected outcome of one Winnow pass over a single block of `len` bits
/// with i.i.d. bit errors at rate `p`.
///
/// Returns `(expected errors after the pass, P[parity disagrees])`. Odd
/// weights trigger a syndrome exchange: weight 1 is fixed, weight 3 always
/// gains a fourth error (the XOR of three distinct positions is never one of
/// them), larger odd weights lose an error with probability `w / len`.
pub fn block_outcome<T: Scalar>(len: usize, p: T) -> (T, T) {
    if p <= T::zero() || len == 0 {
        return (T::zero(), T::zero());
    }
    let lenf = from_u64::<T>(len as u64);
    let p_odd = (T::one() - (T::one() - lit::<T>(2.0) * p).powi(len as i32)) / lit(2.0);
    let log_odds = p.ln() - (-p).ln_1p();
    let mut log_pmf = lenf * (-p).ln_1p();
    let mut errors = T::zero();
    for w in 0..=len {
        if w > 0 {
            log_pmf = log_pmf + (from_u64::<T>((len - w + 1) as u64) / from_u64::<T>(w as u64)).ln() + log_odds;
        }
        let pw = log_pmf.exp();
        let wf = from_u64::<T>(w as u64);
        let out = if w % 2 == 0 {
            wf
        } else if w == 1 {
            T::zero()
        } else {
            let back = if w == 3 { T::zero() } else { (wf / lenf).min(T::one()) };
            (wf + T::one()) * (T::one() - back) + (wf - T::one()) * back
        };
        errors = errors + pw * out;
    }
    (errors, p_odd)
}

/// Per-iteration and total prediction for a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePrediction<T = f64> {
    /// Bit error rate after each iteration.
    pub ber: Vec<T>,
    /// Expected disclosed bits in each iteration.
    pub leakage: Vec<T>,
}

impl<T: Scalar> SchedulePrediction<T> {
    pub fn output_ber(&self) -> T {
        self.ber.last().copied().unwrap_or(T::zero())
    }

    pub fn total_leakage(&self) -> T {
        self.leakage.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// One iteration of the recursion over an `n`-bit key.
pub fn predict_iteration<T: Scalar>(ber: T, block_size: usize, n: usize) -> (T, T) {
    let full = n / block_size;
    let rem = n % block_size;
    let mut errors = T::zero();
    let mut leak = T::zero();
    for (count, len) in [(full, block_size), (usize::from(rem > 0), rem)] {
        if count == 0 {
            continue;
        }
        let (e, p_odd) = block_outcome(len, ber);
        let c = from_u64::<T>(count as u64);
        errors = errors + c * e;
        leak = leak + c * (T::one() + from_u64::<T>(syndrome_width(len) as u64) * p_odd);
    }
    (errors / from_u64(n as u64), leak)
}

pub fn predict_schedule<T: Scalar>(block_sizes: &[usize], ber: T, n: usize) -> SchedulePrediction<T> {
    let mut out = SchedulePrediction { ber: Vec::new(), leakage: Vec::new() };
    let mut p = ber;
    for &size in block_sizes {
        let (next, leak) = predict_iteration(p, size, n);
        out.ber.push(next);
        out.leakage.push(leak);
        p = next;
    }
    out
}

/// Residual BER each schedule must reach: `p_fail / (2 n)`.
pub fn target_ber<T: Scalar>(n: usize, p_fail: T) -> T {
    p_fail / (lit::<T>(2.0) * from_u64(n as u64))
}

/// Schedule with the least expected leakage whose predicted output BER at
/// `q_max` is below `p_fail / (2n)`.
///
/// Exhaustive over every sequence of at most [`MAX_ITERATIONS`] sizes from
/// [`BLOCK_SIZES`], pruned on accumulated leakage. Ties keep the sequence
/// found first in lexicographic order of sizes.
pub fn optimize_schedule<T: Scalar>(q_max: T, n: usize, p_fail: T) -> Result<WinnowSchedule, ReconError> {
    let target = target_ber(n, p_fail);
    let mut best: Option<(T, Vec<usize>)> = None;
    let mut path = Vec::with_capacity(MAX_ITERATIONS);
    search(q_max, T::zero(), n, target, &mut path, &mut best);
    match best {
        Some((_, sizes)) => WinnowSchedule::new(sizes, true),
        None => Err(ReconError::Infeasible {
            q_max: q_max.to_f64().unwrap_or(f64::NAN),
            target: target.to_f64().unwrap_or(f64::NAN),
        }),
    }
}

fn search<T: Scalar>(
    ber: T,
    leaked: T,
    n: usize,
    target: T,
    path: &mut Vec<usize>,
    best: &mut Option<(T, Vec<usize>)>,
) {
    if !path.is_empty() && ber < target {
        if best.as_ref().is_none_or(|(b, _)| leaked < *b) {
            *best = Some((leaked, path.clone()));
        }
        return;
    }
    if path.len() == MAX_ITERATIONS {
        return;
    }
    for &size in &BLOCK_SIZES {
        let (next, leak) = predict_iteration(ber, size, n);
        let total = leaked + leak;
        if best.as_ref().is_some_and(|(b, _)| total >= *b) {
            continue;
        }
        path.push(size);
        search(next, total, n, target, path, best);
        path.pop();
    }
}

/// Public block structure of one Winnow iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub iteration: usize,
    pub block_size: usize,
    /// `order[pos]` is the key index placed at permuted position `pos`.
    pub order: Vec<usize>,
}

impl BlockLayout {
    /// Derives the layout from the shared public stream. Both endpoints call
    /// this in the same sequence and obtain identical layouts.
    pub fn derive<R: Rng + ?Sized>(iteration: usize, block_size: usize, n: usize, permute: bool, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        if permute {
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
        }
        Self { iteration, block_size, order }
    }

    pub fn num_blocks(&self) -> usize {
        self.order.len().div_ceil(self.block_size)
    }

    pub fn block(&self, b: usize) -> &[usize] {
        let start = b * self.block_size;
        let end = (start + self.block_size).min(self.order.len());
        &self.order[start..end]
    }

    /// Parity of every block of `bits`.
    pub fn parities(&self, bits: &BitVector) -> BitVector {
        (0..self.num_blocks()).map(|b| block_syndrome(bits, self.block(b)).0).collect()
    }

    /// Position syndromes of the listed blocks.
    pub fn syndromes(&self, bits: &BitVector, blocks: &[usize]) -> Vec<u32> {
        blocks.iter().map(|&b| block_syndrome(bits, self.block(b)).1).collect()
    }
}

/// Alice's side of the exchange as seen by Bob.
pub trait ParityOracle {
    fn parities(&mut self, layout: &BlockLayout) -> Result<BitVector, ReconError>;
    fn syndromes(&mut self, layout: &BlockLayout, blocks: &[usize]) -> Result<Vec<u32>, ReconError>;
}

/// Oracle answering from a key held in memory.
pub struct LocalOracle<'a> {
    key: &'a BitVector,
}

impl<'a> LocalOracle<'a> {
    pub fn new(key: &'a BitVector) -> Self {
        Self { key }
    }
}

impl ParityOracle for LocalOracle<'_> {
    fn parities(&mut self, layout: &BlockLayout) -> Result<BitVector, ReconError> {
        Ok(layout.parities(self.key))
    }

    fn syndromes(&mut self, layout: &BlockLayout, blocks: &[usize]) -> Result<Vec<u32>, ReconError> {
        Ok(layout.syndromes(self.key, blocks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DisclosureKind {
    Parity = 0,
    Syndrome = 1,
}

/// One disclosed item: `(iteration, block, kind, payload bits)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub iteration: u16,
    pub block: u32,
    pub kind: DisclosureKind,
    pub payload: BitVector,
}

/// Total number of disclosed bits in a transcript.
pub fn disclosed_bits(transcript: &[TranscriptEntry]) -> usize {
    transcript.iter().map(|e| e.payload.len()).sum()
}

/// Serializes a transcript: per entry `iteration:u16le, block:u32le, kind:u8,
/// bit_len:u8, payload` with canonical bit packing.
pub fn encode_transcript(transcript: &[TranscriptEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(transcript.len() * 9);
    for e in transcript {
        out.extend_from_slice(&e.iteration.to_le_bytes());
        out.extend_from_slice(&e.block.to_le_bytes());
        out.push(e.kind as u8);
        out.push(e.payload.len() as u8);
        out.extend_from_slice(&e.payload.to_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationReport {
    pub corrected: BitVector,
    /// Exact number of disclosed bits, `L_EC`.
    pub leakage: usize,
    pub iterations_run: usize,
    /// Residual BER predicted from the first-iteration failure fraction.
    pub residual_estimate: f64,
    pub transcript: Vec<TranscriptEntry>,
}

fn syndrome_bits(value: u32, width: u32) -> BitVector {
    (0..width).map(|i| (value >> i) & 1 == 1).collect()
}

/// Bob's side of Winnow: corrects `x_prime` towards the oracle's key.
///
/// `rng` is the public stream; layouts are drawn from it one per iteration.
pub fn winnow_reconcile<O, R>(
    x_prime: &BitVector,
    schedule: &WinnowSchedule,
    oracle: &mut O,
    rng: &mut R,
) -> Result<ReconciliationReport, ReconError>
where
    O: ParityOracle + ?Sized,
    R: Rng + ?Sized,
{
    let n = x_prime.len();
    let mut key = x_prime.clone();
    let mut transcript = Vec::new();
    let mut first_fail_fraction = None;

    for (iteration, &size) in schedule.block_sizes().iter().enumerate() {
        let layout = BlockLayout::derive(iteration, size, n, schedule.permute_between(), rng);
        let theirs = oracle.parities(&layout)?;
        if theirs.len() != layout.num_blocks() {
            return Err(ReconError::OracleShape { expected: layout.num_blocks(), actual: theirs.len() });
        }
        let ours = layout.parities(&key);
        let mut failing = Vec::new();
        for b in 0..layout.num_blocks() {
            transcript.push(TranscriptEntry {
                iteration: iteration as u16,
                block: b as u32,
                kind: DisclosureKind::Parity,
                payload: std::iter::once(theirs.get(b)).collect(),
            });
            if theirs.get(b) != ours.get(b) {
                failing.push(b);
            }
        }
        if first_fail_fraction.is_none() {
            first_fail_fraction = Some(failing.len() as f64 / layout.num_blocks().max(1) as f64);
        }
        if failing.is_empty() {
            continue;
        }
        let their_syn = oracle.syndromes(&layout, &failing)?;
        if their_syn.len() != failing.len() {
            return Err(ReconError::OracleShape { expected: failing.len(), actual: their_syn.len() });
        }
        let our_syn = layout.syndromes(&key, &failing);
        for ((&b, &sa), &sb) in failing.iter().zip(&their_syn).zip(&our_syn) {
            let block = layout.block(b);
            let width = syndrome_width(block.len());
            transcript.push(TranscriptEntry {
                iteration: iteration as u16,
                block: b as u32,
                kind: DisclosureKind::Syndrome,
                payload: syndrome_bits(sa, width),
            });
            let pos = (sa ^ sb) as usize;
            if pos < block.len() {
                key.flip(block[pos]);
            }
        }
    }

    let residual_estimate = match first_fail_fraction {
        Some(f) => {
            let size = schedule.block_sizes()[0] as f64;
            let p0 = if f >= 0.5 { 0.5 } else { (1.0 - (1.0 - 2.0 * f).powf(1.0 / size)) / 2.0 };
            predict_schedule(schedule.block_sizes(), p0, n.max(1)).output_ber()
        }
        None => 0.0,
    };
    Ok(ReconciliationReport {
        corrected: key,
        leakage: disclosed_bits(&transcript),
        iterations_run: schedule.block_sizes().len(),
        residual_estimate,
        transcript,
    })
}
