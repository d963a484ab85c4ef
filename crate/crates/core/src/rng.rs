//! Named, reproducible random streams.
//!
//! Every stream is a ChaCha20 generator keyed by
//!
//! ```text
//! SHA-256( "qkd-stream/v1" || master_seed:u64le || session:u64le || party:u8 || purpose:u8 )
//! ```
//!
//! so any implementation that reproduces this derivation and ChaCha20 draws
//! the same bits for a given `(master seed, session, party, purpose)`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

const DOMAIN: &[u8] = b"qkd-stream/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Party {
    Alice = 0,
    Bob = 1,
    /// Public randomness visible to both endpoints and to the eavesdropper.
    Public = 2,
    /// The simulated physical channel.
    Channel = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Preparation = 0,
    Measurement = 1,
    Subsampling = 2,
    Reconciliation = 3,
    Verification = 4,
    Amplification = 5,
    Noise = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub session: u64,
    pub party: Party,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(session: u64, party: Party, purpose: Purpose) -> Self {
        Self { session, party, purpose }
    }
}

pub fn stream_key(master_seed: u64, id: StreamId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(master_seed.to_le_bytes());
    h.update(id.session.to_le_bytes());
    h.update([id.party as u8, id.purpose as u8]);
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    key
}

pub fn derive_stream(master_seed: u64, id: StreamId) -> StreamRng {
    StreamRng::from_seed(stream_key(master_seed, id))
}
