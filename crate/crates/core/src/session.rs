//! Full two-party sessions.
//!
//! Alice and Bob run as separate state machines. Photons go over an
//! in-process quantum link; everything else is a [`Message`] on a
//! [`Transport`]. Each endpoint draws only from its own streams plus the
//! shared public streams, so a session is a pure function of the config.
//!
//! Phases: batched sifting (Bob announces detections and bases first, Alice
//! answers with hers), estimation (Alice reveals `Z`, Bob tests), Winnow
//! driven by Bob, verification (Alice sends the hash), and privacy
//! amplification to the general- and pragmatic-secrecy lengths.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use rand::Rng;
use thiserror::Error;

use crate::bitops::{syndrome_width, BitOpsError, BitVector, ToeplitzSeed};
use crate::bounds::{
    eps_rob_bound, expected_qubits, key_rate, mu, n_ec, secret_len_gs, BoundReport, BoundsError, PsCalculator,
    SecrecyMode, SecurityBudget,
};
use crate::channel::{Basis, ChannelModel, Detection};
use crate::privacy::{amplify_with_seed, PrivacyError, VerificationTag};
use crate::reconciliation::{
    optimize_schedule, winnow_reconcile, BlockLayout, ParityOracle, ReconError, WinnowSchedule,
};
use crate::rng::{derive_stream, Party, Purpose, StreamId, StreamRng};
use crate::sifting::{subsample_indices, test_estimation, EstimationDecision, ProtocolParams, SiftTally};
use crate::wire::{AbortReason, MemoryTransport, Message, Recorded, Transport, WireError};

/// Default number of slots Alice prepares per batch.
pub const DEFAULT_BATCH: usize = 4096;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("quantum link closed")]
    LinkClosed,
    #[error("endpoint thread panicked")]
    Panicked,
    #[error(transparent)]
    Reconciliation(#[from] ReconError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Bits(#[from] BitOpsError),
}

fn violation(msg: impl Into<String>) -> SessionError {
    SessionError::Protocol(msg.into())
}

fn unexpected(expected: &'static str, got: &Message) -> SessionError {
    SessionError::Wire(WireError::Unexpected { expected, got: got.name() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionStatus {
    Accepted,
    /// `Q̃_Z > Q_tol_Z`.
    EstimationAbort,
    /// No Winnow schedule meets the failure budget at `Q_max_X`.
    ReconciliationInfeasible,
    /// The verification hashes differed.
    VerificationAbort,
    /// The slot guard ran out before the quotas filled.
    SlotBudgetExceeded,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Accepted => "accepted",
            SessionStatus::EstimationAbort => "estimation-abort",
            SessionStatus::ReconciliationInfeasible => "reconciliation-infeasible",
            SessionStatus::VerificationAbort => "verification-abort",
            SessionStatus::SlotBudgetExceeded => "slot-budget-exceeded",
        }
    }

    fn from_abort(reason: AbortReason) -> Self {
        match reason {
            AbortReason::SlotBudget => SessionStatus::SlotBudgetExceeded,
            AbortReason::Estimation => SessionStatus::EstimationAbort,
            AbortReason::Reconciliation => SessionStatus::ReconciliationInfeasible,
            AbortReason::Verification => SessionStatus::VerificationAbort,
        }
    }
}

/// Caches the expensive planning results shared by many sessions: Winnow
/// schedules and pragmatic-secrecy calculators.
type ScheduleCache = HashMap<(u64, usize, u64), Result<WinnowSchedule, ReconError>>;

#[derive(Debug, Default)]
pub struct Planner {
    schedules: Mutex<ScheduleCache>,
    ps: Mutex<HashMap<(u64, u64, u64), PsCalculator>>,
}

impl Planner {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn schedule(&self, q_max_x: f64, n: usize, p_fail: f64) -> Result<WinnowSchedule, ReconError> {
        let key = (q_max_x.to_bits(), n, p_fail.to_bits());
        let mut map = self.schedules.lock().expect("planner lock");
        map.entry(key).or_insert_with(|| optimize_schedule(q_max_x, n, p_fail)).clone()
    }

    pub fn ps_length(&self, n: u64, k: u64, q_tol_z: f64, n_ec: i64, delta_sec: f64) -> Result<u64, BoundsError> {
        let key = (n, k, q_tol_z.to_bits());
        let mut map = self.ps.lock().expect("planner lock");
        let calc = match map.entry(key) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(PsCalculator::new(n, k, q_tol_z)?),
        };
        calc.secret_len(n_ec, delta_sec)
    }

    /// `(ℓ_GS, ℓ_PS)` for a measured leakage; a mode not requested yields 0.
    pub fn lengths(
        &self,
        params: &ProtocolParams,
        l_ec: f64,
        budget: &SecurityBudget,
        modes: &[SecrecyMode],
    ) -> Result<(u64, u64), BoundsError> {
        let (n, k) = (params.n as u64, params.k as u64);
        let gs = if modes.contains(&SecrecyMode::General) {
            secret_len_gs(n, k, params.q_tol_z, l_ec, budget)?
        } else {
            0
        };
        let ps = if modes.contains(&SecrecyMode::Pragmatic) {
            self.ps_length(n, k, params.q_tol_z, n_ec(n, l_ec, budget), budget.delta_sec())?
        } else {
            0
        };
        Ok((gs, ps))
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub params: ProtocolParams,
    pub channel: ChannelModel,
    pub budget: SecurityBudget,
    pub modes: Vec<SecrecyMode>,
    pub master_seed: u64,
    pub session: u64,
    pub batch_slots: usize,
}

impl SessionConfig {
    pub fn new(params: ProtocolParams, channel: ChannelModel, master_seed: u64) -> Self {
        Self {
            params,
            channel,
            budget: SecurityBudget::default(),
            modes: vec![SecrecyMode::General, SecrecyMode::Pragmatic],
            master_seed,
            session: 0,
            batch_slots: DEFAULT_BATCH,
        }
    }

    fn stream(&self, party: Party, purpose: Purpose) -> StreamRng {
        derive_stream(self.master_seed, StreamId::new(self.session, party, purpose))
    }
}

/// A prepared single photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Photon {
    pub bit: bool,
    pub basis: Basis,
}

pub type PhotonSender = Sender<Vec<Photon>>;
pub type PhotonReceiver = Receiver<Vec<Photon>>;

/// Final keys of one party; `None` when the length was zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartyKeys {
    pub gs: Option<BitVector>,
    pub ps: Option<BitVector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiftCounts {
    pub slots_sent: u64,
    pub detections: u64,
    pub x_matches: usize,
    pub z_matches: usize,
}

/// What Alice ends up with.
#[derive(Debug, Clone)]
pub struct AliceResult {
    pub status: SessionStatus,
    pub counts: SiftCounts,
    pub x: Option<BitVector>,
    pub keys: PartyKeys,
    pub lengths: (u64, u64),
    pub transcript: Vec<u8>,
}

/// What Bob ends up with.
#[derive(Debug, Clone)]
pub struct BobResult {
    pub status: SessionStatus,
    pub counts: SiftCounts,
    pub x_prime: Option<BitVector>,
    pub x_hat: Option<BitVector>,
    pub estimation_errors: Option<u32>,
    pub leakage: Option<usize>,
    pub schedule: Option<Vec<usize>>,
    pub keys: PartyKeys,
    pub lengths: (u64, u64),
}

struct Sifted {
    key: BitVector,
    est: BitVector,
    counts: SiftCounts,
}

fn bit_vec(v: &[bool]) -> BitVector {
    BitVector::from_bools(v)
}

fn select(v: &[bool], idx: &[usize]) -> BitVector {
    idx.iter().map(|&i| v[i]).collect()
}

fn finish_sift(cfg: &SessionConfig, key: Vec<bool>, est: Vec<bool>, tally: &SiftTally) -> Sifted {
    let mut public = cfg.stream(Party::Public, Purpose::Subsampling);
    let xi = subsample_indices(key.len(), cfg.params.n, &mut public);
    let zi = subsample_indices(est.len(), cfg.params.k, &mut public);
    Sifted {
        key: select(&key, &xi),
        est: select(&est, &zi),
        counts: SiftCounts {
            slots_sent: tally.sent,
            detections: tally.received,
            x_matches: tally.x_matches,
            z_matches: tally.z_matches,
        },
    }
}

fn alice_sift<T: Transport>(cfg: &SessionConfig, t: &mut T, link: &PhotonSender) -> Result<Result<Sifted, SiftCounts>, SessionError> {
    let p = &cfg.params;
    let budget = p.slot_budget(cfg.channel.detection());
    let mut prep = cfg.stream(Party::Alice, Purpose::Preparation);
    let mut tally = SiftTally::default();
    let (mut key, mut est) = (Vec::new(), Vec::new());
    let mut batch = 0u32;
    while !tally.quotas_met(p.n, p.k) {
        if tally.sent >= budget {
            return Ok(Err(counts_of(&tally)));
        }
        let size = (cfg.batch_slots as u64).min(budget - tally.sent) as usize;
        let photons: Vec<Photon> = (0..size).map(|_| Photon { bit: prep.gen(), basis: p.draw_basis(&mut prep) }).collect();
        link.send(photons.clone()).map_err(|_| SessionError::LinkClosed)?;
        let (mask, bob_bases) = match t.recv()? {
            Message::Detected { batch: b, mask, bases } if b == batch => (mask, bases),
            other => return Err(unexpected("Detected", &other)),
        };
        if mask.len() != size || bob_bases.len() != mask.count_ones() {
            return Err(violation("detection announcement has wrong shape"));
        }
        let mine: BitVector = photons.iter().zip(mask.iter()).filter(|(_, d)| *d).map(|(ph, _)| ph.basis.as_bit()).collect();
        t.send(&Message::BasisReveal { batch, bases: mine })?;
        let mut j = 0;
        for (ph, detected) in photons.iter().zip(mask.iter()) {
            let bob = if detected {
                j += 1;
                Basis::from_bit(bob_bases.get(j - 1))
            } else {
                ph.basis
            };
            match tally.record(detected, ph.basis, bob) {
                Some(Basis::X) => key.push(ph.bit),
                Some(Basis::Z) => est.push(ph.bit),
                None => {}
            }
        }
        batch += 1;
    }
    Ok(Ok(finish_sift(cfg, key, est, &tally)))
}

fn counts_of(t: &SiftTally) -> SiftCounts {
    SiftCounts { slots_sent: t.sent, detections: t.received, x_matches: t.x_matches, z_matches: t.z_matches }
}

fn bob_sift<T: Transport>(cfg: &SessionConfig, t: &mut T, link: &PhotonReceiver) -> Result<Result<Sifted, SiftCounts>, SessionError> {
    let p = &cfg.params;
    let budget = p.slot_budget(cfg.channel.detection());
    let mut meas = cfg.stream(Party::Bob, Purpose::Measurement);
    let mut noise = cfg.stream(Party::Channel, Purpose::Noise);
    let mut tally = SiftTally::default();
    let (mut key, mut est) = (Vec::new(), Vec::new());
    let mut batch = 0u32;
    while !tally.quotas_met(p.n, p.k) {
        if tally.sent >= budget {
            return Ok(Err(counts_of(&tally)));
        }
        let photons = link.recv().map_err(|_| SessionError::LinkClosed)?;
        let mut mask = Vec::with_capacity(photons.len());
        let mut bases = Vec::new();
        let mut outcomes = Vec::with_capacity(photons.len());
        for ph in &photons {
            let basis = p.draw_basis(&mut meas);
            let outcome = cfg.channel.transmit(ph.bit, ph.basis, basis, &mut noise);
            let detected = matches!(outcome, Detection::Bit(_));
            mask.push(detected);
            if detected {
                bases.push(basis.as_bit());
            }
            outcomes.push((basis, outcome));
        }
        t.send(&Message::Detected { batch, mask: bit_vec(&mask), bases: bit_vec(&bases) })?;
        let alice_bases = match t.recv()? {
            Message::BasisReveal { batch: b, bases } if b == batch => bases,
            other => return Err(unexpected("BasisReveal", &other)),
        };
        if alice_bases.len() != bases.len() {
            return Err(violation("basis reveal has wrong length"));
        }
        let mut j = 0;
        for (basis, outcome) in outcomes {
            let (detected, alice, bit) = match outcome {
                Detection::Bit(b) => {
                    j += 1;
                    (true, Basis::from_bit(alice_bases.get(j - 1)), b)
                }
                Detection::Lost => (false, basis, false),
            };
            match tally.record(detected, alice, basis) {
                Some(Basis::X) => key.push(bit),
                Some(Basis::Z) => est.push(bit),
                None => {}
            }
        }
        batch += 1;
    }
    Ok(Ok(finish_sift(cfg, key, est, &tally)))
}

fn amplify(cfg: &SessionConfig, key: &BitVector, lengths: (u64, u64)) -> Result<PartyKeys, SessionError> {
    let mut public = cfg.stream(Party::Public, Purpose::Amplification);
    let mut out = PartyKeys::default();
    for (ell, slot) in [(lengths.0, &mut out.gs), (lengths.1, &mut out.ps)] {
        if ell > 0 {
            let seed = ToeplitzSeed::random(ell as usize, key.len(), &mut public);
            *slot = Some(amplify_with_seed(key, &seed)?);
        }
    }
    Ok(out)
}

/// Alice's endpoint.
pub fn run_alice<T: Transport>(
    cfg: &SessionConfig,
    planner: &Planner,
    transport: T,
    link: PhotonSender,
) -> Result<AliceResult, SessionError> {
    let mut t = Recorded::new(transport);
    let mut result = AliceResult {
        status: SessionStatus::Accepted,
        counts: SiftCounts::default(),
        x: None,
        keys: PartyKeys::default(),
        lengths: (0, 0),
        transcript: Vec::new(),
    };
    let sifted = match alice_sift(cfg, &mut t, &link)? {
        Ok(s) => s,
        Err(counts) => {
            result.counts = counts;
            result.status = SessionStatus::SlotBudgetExceeded;
            result.transcript = t.into_log();
            return Ok(result);
        }
    };
    drop(link);
    result.counts = sifted.counts.clone();
    result.x = Some(sifted.key.clone());
    let status = alice_post(cfg, planner, &mut t, &sifted, &mut result)?;
    result.status = status;
    result.transcript = t.into_log();
    Ok(result)
}

fn alice_post<T: Transport>(
    cfg: &SessionConfig,
    planner: &Planner,
    t: &mut T,
    sifted: &Sifted,
    result: &mut AliceResult,
) -> Result<SessionStatus, SessionError> {
    let p = &cfg.params;
    t.send(&Message::EstimationBits { z: sifted.est.clone() })?;
    match t.recv()? {
        Message::EstimationResult { proceed: true, .. } => {}
        Message::EstimationResult { proceed: false, .. } => return Ok(SessionStatus::EstimationAbort),
        other => return Err(unexpected("EstimationResult", &other)),
    }
    let schedule = match planner.schedule(p.q_max_x, p.n, cfg.budget.p_fail()) {
        Ok(s) => s,
        Err(ReconError::Infeasible { .. }) => return Ok(SessionStatus::ReconciliationInfeasible),
        Err(e) => return Err(e.into()),
    };
    let x = &sifted.key;
    let mut public = cfg.stream(Party::Public, Purpose::Reconciliation);
    let mut layouts: Vec<BlockLayout> = Vec::new();
    let mut disclosed = 0usize;
    loop {
        match t.recv()? {
            Message::ParityRequest { iteration } => {
                let i = iteration as usize;
                if i != layouts.len() || i >= schedule.block_sizes().len() {
                    return Err(violation(format!("parity request for iteration {i} out of order")));
                }
                let layout = BlockLayout::derive(i, schedule.block_sizes()[i], x.len(), schedule.permute_between(), &mut public);
                let bits = layout.parities(x);
                disclosed += bits.len();
                t.send(&Message::Parities { iteration, bits })?;
                layouts.push(layout);
            }
            Message::SyndromeRequest { iteration, blocks } => {
                let layout = layouts
                    .get(iteration as usize)
                    .ok_or_else(|| violation("syndrome request before parities"))?;
                let idx: Vec<usize> = blocks.iter().map(|&b| b as usize).collect();
                if idx.iter().any(|&b| b >= layout.num_blocks()) {
                    return Err(violation("syndrome request for unknown block"));
                }
                disclosed += idx.iter().map(|&b| syndrome_width(layout.block(b).len()) as usize).sum::<usize>();
                let values = layout.syndromes(x, &idx).into_iter().map(|v| v as u16).collect();
                t.send(&Message::Syndromes { iteration, values })?;
            }
            Message::Abort { reason } => return Ok(SessionStatus::from_abort(reason)),
            Message::VerifyResult { .. } => return Err(violation("verification before reconciliation finished")),
            Message::ReconciliationDone { leakage } if leakage as usize == disclosed => break,
            Message::ReconciliationDone { .. } => return Err(violation("leakage count disagrees")),
            other => return Err(unexpected("reconciliation request", &other)),
        }
    }

    let hash_len = cfg.budget.verification_len() as usize;
    let tag = VerificationTag::compute(x, hash_len, &mut cfg.stream(Party::Public, Purpose::Verification))?;
    t.send(&Message::VerifyTag { tag: tag.tag })?;
    match t.recv()? {
        Message::VerifyResult { ok: true } => {}
        Message::VerifyResult { ok: false } => return Ok(SessionStatus::VerificationAbort),
        other => return Err(unexpected("VerifyResult", &other)),
    }

    let lengths = planner.lengths(p, disclosed as f64, &cfg.budget, &cfg.modes)?;
    t.send(&Message::Finish { ell_gs: lengths.0, ell_ps: lengths.1 })?;
    result.lengths = lengths;
    result.keys = amplify(cfg, x, lengths)?;
    Ok(SessionStatus::Accepted)
}

/// Bob's view of Alice during Winnow.
struct NetworkOracle<'a, T> {
    t: &'a mut T,
}

impl<T: Transport> ParityOracle for NetworkOracle<'_, T> {
    fn parities(&mut self, layout: &BlockLayout) -> Result<BitVector, ReconError> {
        let iteration = layout.iteration as u16;
        let net = |e: WireError| ReconError::Oracle(e.to_string());
        self.t.send(&Message::ParityRequest { iteration }).map_err(net)?;
        match self.t.recv().map_err(net)? {
            Message::Parities { iteration: i, bits } if i == iteration => Ok(bits),
            other => Err(ReconError::Oracle(format!("expected Parities, got {}", other.name()))),
        }
    }

    fn syndromes(&mut self, layout: &BlockLayout, blocks: &[usize]) -> Result<Vec<u32>, ReconError> {
        let iteration = layout.iteration as u16;
        let net = |e: WireError| ReconError::Oracle(e.to_string());
        let blocks = blocks.iter().map(|&b| b as u32).collect();
        self.t.send(&Message::SyndromeRequest { iteration, blocks }).map_err(net)?;
        match self.t.recv().map_err(net)? {
            Message::Syndromes { iteration: i, values } if i == iteration => Ok(values.into_iter().map(u32::from).collect()),
            other => Err(ReconError::Oracle(format!("expected Syndromes, got {}", other.name()))),
        }
    }
}

/// Bob's endpoint.
pub fn run_bob<T: Transport>(
    cfg: &SessionConfig,
    planner: &Planner,
    mut t: T,
    link: PhotonReceiver,
) -> Result<BobResult, SessionError> {
    let mut result = BobResult {
        status: SessionStatus::Accepted,
        counts: SiftCounts::default(),
        x_prime: None,
        x_hat: None,
        estimation_errors: None,
        leakage: None,
        schedule: None,
        keys: PartyKeys::default(),
        lengths: (0, 0),
    };
    let sifted = match bob_sift(cfg, &mut t, &link)? {
        Ok(s) => s,
        Err(counts) => {
            result.counts = counts;
            result.status = SessionStatus::SlotBudgetExceeded;
            return Ok(result);
        }
    };
    result.counts = sifted.counts.clone();
    result.x_prime = Some(sifted.key.clone());
    result.status = bob_post(cfg, planner, &mut t, &sifted, &mut result)?;
    Ok(result)
}

fn bob_post<T: Transport>(
    cfg: &SessionConfig,
    planner: &Planner,
    t: &mut T,
    sifted: &Sifted,
    result: &mut BobResult,
) -> Result<SessionStatus, SessionError> {
    let p = &cfg.params;
    let z = match t.recv()? {
        Message::EstimationBits { z } => z,
        other => return Err(unexpected("EstimationBits", &other)),
    };
    if z.len() != sifted.est.len() {
        return Err(violation("estimation string has wrong length"));
    }
    let errors = z.hamming_distance(&sifted.est) as u32;
    result.estimation_errors = Some(errors);
    let proceed = test_estimation(&z, &sifted.est, p.q_tol_z) == EstimationDecision::Continue;
    t.send(&Message::EstimationResult { errors, proceed })?;
    if !proceed {
        return Ok(SessionStatus::EstimationAbort);
    }
    let schedule = match planner.schedule(p.q_max_x, p.n, cfg.budget.p_fail()) {
        Ok(s) => s,
        Err(ReconError::Infeasible { .. }) => return Ok(SessionStatus::ReconciliationInfeasible),
        Err(e) => return Err(e.into()),
    };
    result.schedule = Some(schedule.block_sizes().to_vec());
    let mut public = cfg.stream(Party::Public, Purpose::Reconciliation);
    let report = winnow_reconcile(&sifted.key, &schedule, &mut NetworkOracle { t: &mut *t }, &mut public)?;
    result.leakage = Some(report.leakage);
    t.send(&Message::ReconciliationDone { leakage: report.leakage as u64 })?;

    let tag = match t.recv()? {
        Message::VerifyTag { tag } => tag,
        other => return Err(unexpected("VerifyTag", &other)),
    };
    let hash_len = cfg.budget.verification_len() as usize;
    let mine = VerificationTag::compute(&report.corrected, hash_len, &mut cfg.stream(Party::Public, Purpose::Verification))?;
    let ok = mine.tag == tag;
    t.send(&Message::VerifyResult { ok })?;
    result.x_hat = Some(report.corrected.clone());
    if !ok {
        return Ok(SessionStatus::VerificationAbort);
    }

    let lengths = planner.lengths(p, report.leakage as f64, &cfg.budget, &cfg.modes)?;
    match t.recv()? {
        Message::Finish { ell_gs, ell_ps } if (ell_gs, ell_ps) == lengths => {}
        Message::Finish { .. } => return Err(violation("key lengths disagree")),
        other => return Err(unexpected("Finish", &other)),
    }
    result.lengths = lengths;
    result.keys = amplify(cfg, &report.corrected, lengths)?;
    Ok(SessionStatus::Accepted)
}

/// Everything one session produced, with simulator-only comparisons.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub status: SessionStatus,
    pub alice: PartyKeys,
    pub bob: PartyKeys,
    pub counts: SiftCounts,
    pub estimation_errors: Option<u32>,
    pub leakage: Option<usize>,
    pub schedule: Option<Vec<usize>>,
    /// `|X ⊕ X'|` before reconciliation.
    pub raw_key_errors: Option<usize>,
    /// `|X ⊕ X̂|` after reconciliation.
    pub residual_key_errors: Option<usize>,
    pub lengths: (u64, u64),
    pub report: Option<BoundReport>,
    /// Alice's log of every frame sent and received.
    pub transcript: Vec<u8>,
}

impl SessionOutcome {
    /// True when the session was accepted but the parties' keys differ.
    pub fn key_mismatch(&self) -> bool {
        self.status == SessionStatus::Accepted && self.alice != self.bob
    }
}

/// Runs both endpoints over the given transports, Alice on a second thread.
pub fn run_session_over<A, B>(cfg: &SessionConfig, planner: &Planner, alice_t: A, bob_t: B) -> Result<SessionOutcome, SessionError>
where
    A: Transport,
    B: Transport,
{
    let (tx, rx) = channel();
    let (alice, bob) = std::thread::scope(|s| {
        let a = s.spawn(|| run_alice(cfg, planner, alice_t, tx));
        let b = run_bob(cfg, planner, bob_t, rx);
        (a.join(), b)
    });
    let alice = alice.map_err(|_| SessionError::Panicked)??;
    let bob = bob?;
    if alice.status != bob.status {
        return Err(violation(format!("endpoints disagree: {:?} vs {:?}", alice.status, bob.status)));
    }
    let raw = alice.x.as_ref().zip(bob.x_prime.as_ref()).map(|(x, y)| x.hamming_distance(y));
    let residual = alice.x.as_ref().zip(bob.x_hat.as_ref()).map(|(x, y)| x.hamming_distance(y));
    let report = match bob.leakage {
        Some(leak) if alice.status == SessionStatus::Accepted => Some(session_report(cfg, leak, bob.lengths)?),
        _ => None,
    };
    Ok(SessionOutcome {
        status: alice.status,
        alice: alice.keys,
        bob: bob.keys,
        counts: bob.counts,
        estimation_errors: bob.estimation_errors,
        leakage: bob.leakage,
        schedule: bob.schedule,
        raw_key_errors: raw,
        residual_key_errors: residual,
        lengths: bob.lengths,
        report,
        transcript: alice.transcript,
    })
}

fn session_report(cfg: &SessionConfig, leakage: usize, lengths: (u64, u64)) -> Result<BoundReport, SessionError> {
    let p = &cfg.params;
    let (n, k) = (p.n as u64, p.k as u64);
    let eps_rob = eps_rob_bound(k, p.q_tol_z, cfg.channel.qber(Basis::Z));
    Ok(BoundReport {
        n,
        k,
        p_z: p.p_z,
        q_tol_z: p.q_tol_z,
        q_max_x: p.q_max_x,
        l_ec: leakage as f64,
        mu: mu(n, k, cfg.budget.eps_sec())?,
        l_gs: lengths.0,
        l_ps: lengths.1,
        eps_rob,
        m: expected_qubits(n, k),
        r_gs: key_rate(lengths.0, n, k, eps_rob),
        r_ps: key_rate(lengths.1, n, k, eps_rob),
    })
}

/// Runs a session over the in-memory transport.
pub fn run_session(cfg: &SessionConfig, planner: &Planner) -> Result<SessionOutcome, SessionError> {
    let (a, b) = MemoryTransport::pair();
    run_session_over(cfg, planner, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelPreset;
    use crate::wire::StreamTransport;
    use std::net::{TcpListener, TcpStream};

    fn config(preset: &str, n: usize, p_z: f64, q_tol: f64, seed: u64) -> SessionConfig {
        let model = ChannelPreset::by_name(preset).unwrap().model();
        let (qx, _) = model.effective_qber();
        let q_max = crate::reconciliation::choose_qmax(qx, n, 1e-3).unwrap().q_max;
        let params = ProtocolParams::from_pz(n, p_z, q_tol, q_max).unwrap();
        SessionConfig::new(params, model, seed)
    }

    #[test]
    fn noiseless_session_accepts_with_equal_keys() {
        let cfg = config("noiseless", 20_000, 0.3, 0.05, 1);
        let out = run_session(&cfg, &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::Accepted);
        assert_eq!(out.raw_key_errors, Some(0));
        assert!(out.lengths.0 > 0);
        assert!(out.alice.gs.is_some());
        assert_eq!(out.alice, out.bob);
        assert!(!out.key_mismatch());
        let r = out.report.unwrap();
        assert!(r.l_ps >= r.l_gs);
    }

    #[test]
    fn noisy_session_reconciles() {
        let cfg = config("b", 10_000, 0.28, 0.08, 2);
        let out = run_session(&cfg, &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::Accepted);
        assert!(out.raw_key_errors.unwrap() > 100);
        assert_eq!(out.residual_key_errors, Some(0));
        assert_eq!(out.alice, out.bob);
        assert!(out.counts.x_matches >= 10_000);
    }

    #[test]
    fn transcript_is_deterministic() {
        let cfg = config("b", 3_000, 0.4, 0.1, 3);
        let planner = Planner::default();
        let a = run_session(&cfg, &planner).unwrap();
        let b = run_session(&cfg, &planner).unwrap();
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.alice, b.alice);
        let mut other = cfg.clone();
        other.session = 1;
        assert_ne!(run_session(&other, &planner).unwrap().transcript, a.transcript);
    }

    #[test]
    fn estimation_abort_status() {
        let cfg = config("d", 2_000, 0.4, 0.01, 4);
        let out = run_session(&cfg, &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::EstimationAbort);
        assert!(out.alice.gs.is_none() && out.bob.gs.is_none());
    }

    #[test]
    fn infeasible_reconciliation_status() {
        let model = ChannelModel::new(0.3, 0.0, 0.0, 1.0).unwrap();
        let params = ProtocolParams::from_pz(2_000, 0.4, 0.45, 0.2).unwrap();
        let out = run_session(&SessionConfig::new(params, model, 5), &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::ReconciliationInfeasible);
    }

    #[test]
    fn verification_abort_status() {
        // Q_max far below the real error rate: the schedule is too weak
        let model = ChannelModel::new(0.1, 0.0, 0.0, 1.0).unwrap();
        let params = ProtocolParams::from_pz(5_000, 0.4, 0.2, 0.001).unwrap();
        let out = run_session(&SessionConfig::new(params, model, 6), &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::VerificationAbort);
        assert!(out.residual_key_errors.unwrap() > 0);
    }

    #[test]
    fn slot_budget_status() {
        let model = ChannelModel::noiseless().with_detection(0.0).unwrap();
        let params = ProtocolParams::from_pz(100, 0.4, 0.1, 0.05).unwrap();
        let out = run_session(&SessionConfig::new(params, model, 7), &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::SlotBudgetExceeded);
    }

    #[test]
    fn slot_budget_with_partial_loss() {
        let model = ChannelModel::noiseless().with_detection(0.001).unwrap();
        let params = ProtocolParams::from_pz(1_000, 0.4, 0.1, 0.05).unwrap();
        let mut cfg = SessionConfig::new(params, model, 7);
        cfg.batch_slots = 1 << 16;
        let out = run_session(&cfg, &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::Accepted);
    }

    #[test]
    fn tcp_transport_matches_memory() {
        let cfg = config("a", 3_000, 0.4, 0.05, 8);
        let planner = Planner::default();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = TcpStream::connect(addr).unwrap();
        let (server, _) = listener.accept().unwrap();
        let tcp = run_session_over(&cfg, &planner, StreamTransport::new(client), StreamTransport::new(server)).unwrap();
        let mem = run_session(&cfg, &planner).unwrap();
        assert_eq!(tcp.transcript, mem.transcript);
        assert_eq!(tcp.alice, mem.alice);
    }

    #[test]
    fn high_error_preset_only_pragmatic_key() {
        let cfg = config("d", 100_000, 0.3, 0.1, 9);
        let out = run_session(&cfg, &Planner::default()).unwrap();
        assert_eq!(out.status, SessionStatus::Accepted);
        assert_eq!(out.lengths.0, 0);
        assert!(out.lengths.1 > 0);
        assert!(out.alice.gs.is_none());
        assert_eq!(out.alice.ps, out.bob.ps);
    }
}
