//! GF(2) bit vectors, Toeplitz hashing and extended-Hamming syndromes.
//!
//! Bit `i` of a [`BitVector`] lives in word `i / 64` at bit position `i % 64`.
//! The byte serialization follows the same little-endian convention: bit `i`
//! is bit `i % 8` of byte `i / 8`, and unused high bits of the last byte are
//! zero. Every wire and file format in this crate goes through
//! [`BitVector::to_bytes`] / [`BitVector::from_bytes`].

use std::fmt;
use std::ops::BitXor;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitOpsError {
    #[error("length mismatch: expected {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unsupported Hamming block length {0}")]
    UnsupportedBlock(usize),
    #[error("invalid bit string: {0}")]
    Parse(String),
    #[error("byte buffer of {bytes} bytes cannot hold {bits} bits")]
    ShortBuffer { bytes: usize, bits: usize },
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        bits.iter().copied().collect()
    }

    /// Uniformly random vector of the given length.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self { words: (0..len.div_ceil(64)).map(|_| rng.gen()).collect(), len };
        v.clear_padding();
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i & 63);
        if bit {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Parity of the whole vector.
    pub fn parity(&self) -> bool {
        self.words.iter().fold(0u32, |acc, w| acc ^ w.count_ones()) & 1 == 1
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &BitVector) -> usize {
        assert_eq!(self.len, other.len);
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Gathers the bits at `indices` into a new vector.
    pub fn select(&self, indices: &[usize]) -> BitVector {
        indices.iter().map(|&i| self.get(i)).collect()
    }

    pub fn reversed(&self) -> BitVector {
        (0..self.len).rev().map(|i| self.get(i)).collect()
    }

    /// 64 bits starting at bit `pos`; bits past the end read as zero.
    #[inline]
    fn window(&self, pos: usize) -> u64 {
        let w = pos >> 6;
        let s = pos & 63;
        let lo = self.words.get(w).copied().unwrap_or(0);
        if s == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        }
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Canonical little-endian byte packing, `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for i in 0..nbytes {
            out.push((self.words[i / 8] >> ((i % 8) * 8)) as u8);
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Bits beyond `len` are ignored.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, BitOpsError> {
        if bytes.len() < len.div_ceil(8) {
            return Err(BitOpsError::ShortBuffer { bytes: bytes.len(), bits: len });
        }
        let mut v = Self::zeros(len);
        for (i, &b) in bytes.iter().take(len.div_ceil(8)).enumerate() {
            v.words[i / 8] |= (b as u64) << ((i % 8) * 8);
        }
        v.clear_padding();
        Ok(v)
    }

    /// Lowercase hex of [`to_bytes`](Self::to_bytes).
    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self, BitOpsError> {
        let hex = hex.trim();
        if !hex.len().is_multiple_of(2) {
            return Err(BitOpsError::Parse("odd number of hex digits".into()));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| BitOpsError::Parse(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bytes(&bytes, len)
    }
}

impl FromIterator<bool> for BitVector {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut v = BitVector::default();
        for b in iter {
            v.push(b);
        }
        v
    }
}

impl BitXor for &BitVector {
    type Output = BitVector;

    fn bitxor(self, rhs: &BitVector) -> BitVector {
        assert_eq!(self.len, rhs.len, "xor of vectors with different lengths");
        BitVector { words: self.words.iter().zip(&rhs.words).map(|(a, b)| a ^ b).collect(), len: self.len }
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitVector({self})")
        } else {
            write!(f, "BitVector(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl FromStr for BitVector {
    type Err = BitOpsError;

    /// Parses a string of `0`/`1` characters, index 0 first.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(BitOpsError::Parse(format!("unexpected character {other:?}"))),
            })
            .collect()
    }
}

/// Diagonal description of an `out_len x in_len` Toeplitz matrix over GF(2).
///
/// Entry `(i, j)` is `diagonal[i - j + in_len - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    diagonal: BitVector,
    out_len: usize,
    in_len: usize,
}

impl ToeplitzSeed {
    pub fn new(diagonal: BitVector, out_len: usize, in_len: usize) -> Result<Self, BitOpsError> {
        let expected = (out_len + in_len).saturating_sub(1);
        if diagonal.len() != expected || out_len == 0 || in_len == 0 {
            return Err(BitOpsError::LengthMismatch { expected, actual: diagonal.len() });
        }
        Ok(Self { diagonal, out_len, in_len })
    }

    /// Seed drawn uniformly from the caller's stream.
    pub fn random<R: Rng + ?Sized>(out_len: usize, in_len: usize, rng: &mut R) -> Self {
        let diagonal = BitVector::random(out_len + in_len - 1, rng);
        Self { diagonal, out_len, in_len }
    }

    /// Square identity seed: a single one on the main diagonal.
    pub fn identity(len: usize) -> Self {
        let mut diagonal = BitVector::zeros(2 * len - 1);
        diagonal.set(len - 1, true);
        Self { diagonal, out_len: len, in_len: len }
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn diagonal(&self) -> &BitVector {
        &self.diagonal
    }

    pub fn entry(&self, row: usize, col: usize) -> bool {
        self.diagonal.get(row + self.in_len - 1 - col)
    }
}

/// GF(2) product of the seed's Toeplitz matrix with `input`.
///
/// Row `i` dotted with `input` equals the diagonal window starting at `i`
/// dotted with `input` reversed, so each output bit costs `in_len / 64`
/// word operations.
pub fn toeplitz_hash(seed: &ToeplitzSeed, input: &BitVector) -> Result<BitVector, BitOpsError> {
    if input.len() != seed.in_len {
        return Err(BitOpsError::LengthMismatch { expected: seed.in_len, actual: input.len() });
    }
    let rev = input.reversed();
    let mut out = BitVector::zeros(seed.out_len);
    for i in 0..seed.out_len {
        let mut acc = 0u64;
        for (w, &y) in rev.words.iter().enumerate() {
            acc ^= seed.diagonal.window(i + 64 * w) & y;
        }
        if acc.count_ones() & 1 == 1 {
            out.set(i, true);
        }
    }
    Ok(out)
}

/// Number of syndrome bits needed to address `len` positions.
pub fn syndrome_width(len: usize) -> u32 {
    if len <= 1 {
        0
    } else {
        usize::BITS - (len - 1).leading_zeros()
    }
}

/// Parity and position syndrome of the block formed by `bits[order[0]],
/// bits[order[1]], ...`; the syndrome is the XOR of the block positions
/// holding a one.
pub fn block_syndrome(bits: &BitVector, order: &[usize]) -> (bool, u32) {
    let mut parity = false;
    let mut syn = 0u32;
    for (pos, &idx) in order.iter().enumerate() {
        if bits.get(idx) {
            parity = !parity;
            syn ^= pos as u32;
        }
    }
    (parity, syn)
}

/// Syndrome of a whole block (positions in natural order).
pub fn hamming_syndrome(block: &BitVector) -> u32 {
    let mut syn = 0u32;
    for (w, &word) in block.words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let t = bits.trailing_zeros();
            syn ^= (w as u32) * 64 + t;
            bits &= bits - 1;
        }
    }
    syn
}

fn supported_width(len: usize) -> Option<u32> {
    (3..=8u32).find(|&m| len == 1usize << m || len == (1usize << m) - 1)
}

/// Extended-Hamming correction of an XOR-difference block.
///
/// Position `s` (the syndrome) is flipped unless both syndrome and parity are
/// zero; a lone error at position 0 shows up as zero syndrome with odd parity.
/// Returns the corrected difference and the number of syndrome bits that the
/// exchange cost (the block parity is accounted separately by the caller).
pub fn hamming_decode(diff: &BitVector) -> Result<(BitVector, u32), BitOpsError> {
    let m = supported_width(diff.len()).ok_or(BitOpsError::UnsupportedBlock(diff.len()))?;
    let syn = hamming_syndrome(diff) as usize;
    let mut corrected = diff.clone();
    if (syn != 0 || diff.parity()) && syn < diff.len() {
        corrected.flip(syn);
    }
    Ok((corrected, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bv(s: &str) -> BitVector {
        s.parse().unwrap()
    }

    #[test]
    fn byte_packing_is_little_endian() {
        let v = bv("1000000001");
        assert_eq!(v.to_bytes(), vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(BitVector::from_bytes(&[0x01, 0x02], 10).unwrap(), v);
        assert!(BitVector::from_bytes(&[0x01], 10).is_err());
        // stray high bits past len are dropped
        assert_eq!(BitVector::from_bytes(&[0xff], 3).unwrap(), bv("111"));
    }

    #[test]
    fn hex_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = BitVector::random(203, &mut rng);
        assert_eq!(BitVector::from_hex(&v.to_hex(), 203).unwrap(), v);
    }

    #[test]
    fn xor_with_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = BitVector::random(777, &mut rng);
        assert_eq!((&v ^ &v).count_ones(), 0);
        assert_eq!((&v ^ &v).len(), 777);
    }

    #[test]
    fn random_respects_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = BitVector::random(70, &mut rng);
        assert_eq!(v.words()[1] >> 6, 0);
    }

    #[test]
    fn toeplitz_zero_seed() {
        let seed = ToeplitzSeed::new(BitVector::zeros(5 + 9 - 1), 5, 9).unwrap();
        let out = toeplitz_hash(&seed, &bv("110101011")).unwrap();
        assert_eq!(out, BitVector::zeros(5));
    }

    #[test]
    fn toeplitz_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = BitVector::random(130, &mut rng);
        assert_eq!(toeplitz_hash(&ToeplitzSeed::identity(130), &x).unwrap(), x);
    }

    #[test]
    fn toeplitz_hand_example() {
        let seed = ToeplitzSeed::new(bv("1011"), 2, 3).unwrap();
        assert_eq!(
            (0..2).map(|i| (0..3).map(|j| seed.entry(i, j) as u8).collect::<Vec<_>>()).collect::<Vec<_>>(),
            vec![vec![1, 0, 1], vec![1, 1, 0]]
        );
        assert_eq!(toeplitz_hash(&seed, &bv("101")).unwrap(), bv("01"));
    }

    #[test]
    fn toeplitz_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, n) in &[(1, 1), (3, 200), (70, 65), (128, 64), (17, 300)] {
            let seed = ToeplitzSeed::random(m, n, &mut rng);
            let x = BitVector::random(n, &mut rng);
            let fast = toeplitz_hash(&seed, &x).unwrap();
            for i in 0..m {
                let naive = (0..n).fold(false, |acc, j| acc ^ (seed.entry(i, j) & x.get(j)));
                assert_eq!(fast.get(i), naive, "m={m} n={n} row {i}");
            }
        }
    }

    #[test]
    fn toeplitz_length_checks() {
        assert!(ToeplitzSeed::new(BitVector::zeros(4), 2, 2).is_err());
        let seed = ToeplitzSeed::identity(4);
        assert!(matches!(
            toeplitz_hash(&seed, &BitVector::zeros(5)),
            Err(BitOpsError::LengthMismatch { expected: 4, actual: 5 })
        ));
    }

    #[test]
    fn syndrome_widths() {
        assert_eq!(syndrome_width(1), 0);
        assert_eq!(syndrome_width(2), 1);
        assert_eq!(syndrome_width(8), 3);
        assert_eq!(syndrome_width(9), 4);
        assert_eq!(syndrome_width(256), 8);
    }

    #[test]
    fn hamming_zero_difference() {
        let (c, m) = hamming_decode(&BitVector::zeros(8)).unwrap();
        assert_eq!(c.count_ones(), 0);
        assert_eq!(m, 3);
    }

    #[test]
    fn hamming_single_errors_exhaustive_len8() {
        for i in 0..8 {
            let mut d = BitVector::zeros(8);
            d.set(i, true);
            let (c, m) = hamming_decode(&d).unwrap();
            assert_eq!(c.count_ones(), 0, "position {i}");
            assert_eq!(m, 3);
        }
    }

    #[test]
    fn hamming_double_errors_exhaustive_len8() {
        for i in 0..8 {
            for j in (i + 1)..8 {
                let mut d = BitVector::zeros(8);
                d.set(i, true);
                d.set(j, true);
                let (c, _) = hamming_decode(&d).unwrap();
                assert_eq!((&c ^ &d).count_ones(), 1, "exactly one flip for {i},{j}");
                let w = c.count_ones();
                assert!(w == 1 || w == 3, "residual weight {w} for {i},{j}");
            }
        }
    }

    #[test]
    fn hamming_unsupported_lengths() {
        for len in [0, 4, 10, 300, 512] {
            assert_eq!(hamming_decode(&BitVector::zeros(len)), Err(BitOpsError::UnsupportedBlock(len)));
        }
        assert!(hamming_decode(&BitVector::zeros(7)).is_ok());
        assert!(hamming_decode(&BitVector::zeros(255)).is_ok());
    }
}
