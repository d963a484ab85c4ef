//! Error verification and privacy amplification.
//!
//! Both stages hash with a Toeplitz matrix whose seed is drawn from the
//! public stream, so each endpoint derives the same seed locally and the
//! seed itself costs nothing secret.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::bitops::{toeplitz_hash, BitOpsError, BitVector, ToeplitzSeed};
use crate::bounds::{BoundsError, SecrecyMode, SecurityBudget};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("no extractable key (requested length {requested} from {available} bits)")]
    NoKey { requested: usize, available: usize },
    #[error("key lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("malformed key file: {0}")]
    KeyFile(String),
    #[error(transparent)]
    Bits(#[from] BitOpsError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// `⌈log2(P_fail / ε_cor)⌉`.
pub fn verification_hash_len(p_fail: f64, eps_cor: f64) -> Result<usize, PrivacyError> {
    Ok(SecurityBudget::new(0.5, eps_cor, p_fail)?.verification_len() as usize)
}

/// Alice's verification hash together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationTag {
    pub hash_len: usize,
    pub seed: ToeplitzSeed,
    pub tag: BitVector,
}

impl VerificationTag {
    /// Hashes `key` with a fresh seed drawn from `rng`.
    pub fn compute<R: Rng + ?Sized>(key: &BitVector, hash_len: usize, rng: &mut R) -> Result<Self, PrivacyError> {
        let seed = ToeplitzSeed::random(hash_len, key.len(), rng);
        Self::with_seed(key, seed)
    }

    pub fn with_seed(key: &BitVector, seed: ToeplitzSeed) -> Result<Self, PrivacyError> {
        let tag = toeplitz_hash(&seed, key)?;
        Ok(Self { hash_len: seed.out_len(), seed, tag })
    }

    /// Whether `key` hashes to this tag under the same seed.
    pub fn matches(&self, key: &BitVector) -> Result<bool, PrivacyError> {
        if key.len() != self.seed.in_len() {
            return Err(PrivacyError::LengthMismatch(self.seed.in_len(), key.len()));
        }
        Ok(toeplitz_hash(&self.seed, key)? == self.tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verification {
    Match(VerificationTag),
    Abort(VerificationTag),
}

impl Verification {
    pub fn is_match(&self) -> bool {
        matches!(self, Verification::Match(_))
    }
}

/// Compares hashes of `x` (Alice) and `x_hat` (Bob's corrected key).
pub fn verify<R: Rng + ?Sized>(x: &BitVector, x_hat: &BitVector, hash_len: usize, rng: &mut R) -> Result<Verification, PrivacyError> {
    if x.len() != x_hat.len() {
        return Err(PrivacyError::LengthMismatch(x.len(), x_hat.len()));
    }
    let tag = VerificationTag::compute(x, hash_len, rng)?;
    Ok(if tag.matches(x_hat)? { Verification::Match(tag) } else { Verification::Abort(tag) })
}

/// Compresses `key` to `ell` bits with a Toeplitz seed drawn from `rng`.
pub fn privacy_amplify<R: Rng + ?Sized>(key: &BitVector, ell: usize, rng: &mut R) -> Result<BitVector, PrivacyError> {
    if ell == 0 || ell > key.len() {
        return Err(PrivacyError::NoKey { requested: ell, available: key.len() });
    }
    let seed = ToeplitzSeed::random(ell, key.len(), rng);
    amplify_with_seed(key, &seed)
}

pub fn amplify_with_seed(key: &BitVector, seed: &ToeplitzSeed) -> Result<BitVector, PrivacyError> {
    Ok(toeplitz_hash(seed, key)?)
}

/// A final key with the parameters it was extracted under.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedKey {
    pub mode: SecrecyMode,
    /// `ε_sec` for general secrecy, `δ_sec` for pragmatic secrecy.
    pub security: f64,
    pub key: BitVector,
}

const KEY_MAGIC: &str = "# qkd-key v1";

impl ExportedKey {
    /// Text form:
    ///
    /// ```text
    /// # qkd-key v1
    /// length=<ell>
    /// mode=gs|ps
    /// eps_sec=<value>        (or delta_sec= for ps)
    /// <hex, canonical bit packing>
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let label = match self.mode {
            SecrecyMode::General => "eps_sec",
            SecrecyMode::Pragmatic => "delta_sec",
        };
        let _ = writeln!(s, "{KEY_MAGIC}");
        let _ = writeln!(s, "length={}", self.key.len());
        let _ = writeln!(s, "mode={}", self.mode.as_str());
        let _ = writeln!(s, "{label}={:e}", self.security);
        let _ = writeln!(s, "{}", self.key.to_hex());
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PrivacyError> {
        let bad = |m: &str| PrivacyError::KeyFile(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(KEY_MAGIC) {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<String, PrivacyError> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            if k != name && !(name == "security" && (k == "eps_sec" || k == "delta_sec")) {
                return Err(bad(&format!("expected {name}, found {k}")));
            }
            Ok(v.to_string())
        };
        let len: usize = field("length")?.parse().map_err(|_| bad("length"))?;
        let mode = SecrecyMode::parse(&field("mode")?).ok_or_else(|| bad("mode"))?;
        let security: f64 = field("security")?.parse().map_err(|_| bad("security parameter"))?;
        let hex = lines.next().ok_or_else(|| bad("missing key"))?;
        Ok(Self { mode, security, key: BitVector::from_hex(hex, len)? })
    }
}
