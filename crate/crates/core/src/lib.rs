//! Finite-key BB84 simulation and post-processing.
//!
//! The pipeline: asymmetric-basis sifting ([`sifting`]) over a depolarizing
//! link ([`channel`]), estimation and abort, Winnow reconciliation
//! ([`reconciliation`]), Toeplitz verification and privacy amplification
//! ([`privacy`]), with key lengths from the general- and pragmatic-secrecy
//! bounds ([`bounds`]). [`session`] runs the two parties as separate
//! endpoints over a [`wire`] transport; [`harness`] sweeps parameters and
//! writes CSV.

pub mod bitops;
pub mod bounds;
pub mod channel;
pub mod config;
pub mod framing;
pub mod harness;
pub mod numerics;
pub mod privacy;
pub mod reconciliation;
pub mod rng;
pub mod session;
pub mod sifting;
pub mod wire;

pub use bitops::{BitVector, ToeplitzSeed};
pub use bounds::{BoundReport, SecrecyMode, SecurityBudget};
pub use channel::{Basis, ChannelModel, ChannelPreset};
pub use config::ExperimentConfig;
pub use numerics::{Probability, Scalar};
pub use session::{run_session, Planner, SessionConfig, SessionOutcome, SessionStatus};
pub use sifting::ProtocolParams;

pub type Probability64 = Probability<f64>;
pub type Probability32 = Probability<f32>;
pub type SecurityBudget64 = SecurityBudget<f64>;
pub type BoundReport64 = BoundReport<f64>;
