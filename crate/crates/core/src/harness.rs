//! Parameter sweeps, the qubit-budget search and CSV emission.
//!
//! Every row is a pure function of the config and master seed: sessions
//! get their index from the row position, never from scheduling order.

use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{
    asymptotic_rate, eps_rob_bound, expected_qubits, leakage_estimate, optimize_rate, optimize_tolerance, quota_for_pz,
    secret_len_gs, BoundReport, BoundsError, SecrecyMode, SecurityBudget,
};
use crate::channel::{Basis, ChannelModel};
use crate::config::{ExperimentConfig, NamedChannel};
use crate::numerics::{binary_entropy, Probability};
use crate::reconciliation::{choose_qmax, ReconError};
use crate::session::{run_session, Planner, SessionConfig, SessionError, SessionOutcome, SessionStatus};
use crate::sifting::{ProtocolParams, SiftError};

/// Largest sifted length the budget search will consider.
pub const BUDGET_MAX_N: u64 = 1 << 34;
/// Largest estimation length the budget search will consider.
pub const BUDGET_MAX_K: u64 = 1 << 22;
/// Ratio between consecutive `k` grid points in the budget search.
pub const BUDGET_K_STEP: f64 = 1.05;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Reconciliation(#[from] ReconError),
    #[error(transparent)]
    Sift(#[from] SiftError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// The protocol parameters a config selects for one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPlan {
    pub params: ProtocolParams,
    pub l_ec: f64,
    pub q_bar_x: f64,
    pub q_bar_z: f64,
}

/// Resolves `Q_tol_Z`, `Q_max_X` and the planning leakage for a point,
/// optimizing whatever the config leaves on `auto`.
pub fn plan_point(cfg: &ExperimentConfig, model: &ChannelModel, mode: SecrecyMode, n: usize, p_z: f64) -> Result<PointPlan, HarnessError> {
    let (q_bar_x, q_bar_z) = model.effective_qber();
    let k = quota_for_pz(n as u64, p_z);
    let l_ec = match cfg.l_ec {
        Some(l) => l,
        None => leakage_estimate(n as u64, q_bar_x)?,
    };
    let q_max_x = match cfg.q_max_x {
        Some(q) => q,
        None => choose_qmax(q_bar_x, n, cfg.budget.p_fail())?.q_max,
    };
    let q_tol_z = match cfg.q_tol_z {
        Some(q) => q,
        None => {
            let opt = optimize_tolerance(mode, n as u64, k, q_bar_z, l_ec, &cfg.budget, cfg.optimizer.settings(mode))?;
            opt.q_tol_z
        }
    };
    let params = ProtocolParams::new(n, k as usize, q_tol_z, q_max_x)?;
    Ok(PointPlan { params, l_ec, q_bar_x, q_bar_z })
}

/// Averages over the trials at one point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSummary {
    pub trials: usize,
    pub accepted: usize,
    pub estimation_aborts: usize,
    pub verification_aborts: usize,
    pub infeasible: usize,
    pub slot_budget: usize,
    pub mismatches: usize,
    pub mean_leakage: f64,
    /// Mean of `ℓ / detections`, aborts counting as zero.
    pub empirical_rate: f64,
    pub slots_sent: u64,
    pub detections: u64,
    pub x_matches: u64,
    pub z_matches: u64,
}

impl TrialSummary {
    pub fn add(&mut self, out: &SessionOutcome, mode: SecrecyMode) {
        self.trials += 1;
        match out.status {
            SessionStatus::Accepted => self.accepted += 1,
            SessionStatus::EstimationAbort => self.estimation_aborts += 1,
            SessionStatus::VerificationAbort => self.verification_aborts += 1,
            SessionStatus::ReconciliationInfeasible => self.infeasible += 1,
            SessionStatus::SlotBudgetExceeded => self.slot_budget += 1,
        }
        if out.key_mismatch() {
            self.mismatches += 1;
        }
        let ell = match mode {
            SecrecyMode::General => out.lengths.0,
            SecrecyMode::Pragmatic => out.lengths.1,
        };
        if out.status == SessionStatus::Accepted && out.counts.detections > 0 {
            self.empirical_rate += ell as f64 / out.counts.detections as f64;
        }
        if let Some(l) = out.leakage {
            self.mean_leakage += l as f64;
        }
        self.slots_sent += out.counts.slots_sent;
        self.detections += out.counts.detections;
        self.x_matches += out.counts.x_matches as u64;
        self.z_matches += out.counts.z_matches as u64;
    }

    fn finish(mut self, reconciled: usize) -> Self {
        if self.trials > 0 {
            self.empirical_rate /= self.trials as f64;
        }
        self.mean_leakage = if reconciled > 0 { self.mean_leakage / reconciled as f64 } else { f64::NAN };
        self
    }
}

/// Runs `trials` sessions at `params`, with session indices starting at
/// `first_session`.
pub fn run_trials(
    base: &SessionConfig,
    planner: &Planner,
    mode: SecrecyMode,
    trials: usize,
    first_session: u64,
) -> Result<TrialSummary, HarnessError> {
    let mut summary = TrialSummary::default();
    let mut reconciled = 0;
    for t in 0..trials {
        let mut cfg = base.clone();
        cfg.session = first_session + t as u64;
        let out = run_session(&cfg, planner)?;
        reconciled += out.leakage.is_some() as usize;
        summary.add(&out, mode);
    }
    Ok(summary.finish(reconciled))
}

/// One row of a rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub preset: String,
    pub mode: SecrecyMode,
    pub p_z: f64,
    pub n: usize,
    pub bound: Option<BoundReport>,
    pub summary: Option<TrialSummary>,
    pub asymptotic: f64,
    /// Empty for a complete row, otherwise the failure that cut it short.
    pub flag: String,
}

pub const SWEEP_HEADER: &str = concat!(
    "preset,mode,",
    "n,k,p_z,q_tol_z,q_max_x,l_ec,mu,l_gs,l_ps,eps_rob,m,r_gs,r_ps",
    ",trials,accepted,estimation_aborts,verification_aborts,infeasible,mismatches,mean_leakage,empirical_rate,asymptotic_rate,flag"
);

fn csv_field(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let bound = match &self.bound {
            Some(b) => b.csv_row(),
            None => format!("{},,{:.6},,,,,,,,,,", self.n, self.p_z),
        };
        let trials = match &self.summary {
            Some(s) => format!(
                "{},{},{},{},{},{},{:.3},{:.6}",
                s.trials, s.accepted, s.estimation_aborts, s.verification_aborts, s.infeasible, s.mismatches, s.mean_leakage, s.empirical_rate
            ),
            None => ",,,,,,,".to_string(),
        };
        format!("{},{},{},{},{:.6},{}", self.preset, self.mode.as_str(), bound, trials, self.asymptotic, csv_field(&self.flag))
    }
}

fn sweep_point(cfg: &ExperimentConfig, planner: &Planner, ch: &NamedChannel, mode: SecrecyMode, p_z: f64, n: usize, index: u64) -> SweepRow {
    let (qx, qz) = ch.model.effective_qber();
    let mut row = SweepRow {
        preset: ch.name.clone(),
        mode,
        p_z,
        n,
        bound: None,
        summary: None,
        asymptotic: asymptotic_rate(qx, qz).unwrap_or(f64::NAN),
        flag: String::new(),
    };
    let result = (|| -> Result<(), HarnessError> {
        let plan = plan_point(cfg, &ch.model, mode, n, p_z)?;
        let p = plan.params;
        row.bound = Some(BoundReport::evaluate(p.n as u64, p.k as u64, p.q_tol_z, p.q_max_x, plan.q_bar_z, plan.l_ec, &cfg.budget)?);
        let mut base = SessionConfig::new(p, ch.model, cfg.seed);
        base.budget = cfg.budget;
        base.modes = vec![mode];
        base.batch_slots = cfg.batch;
        row.summary = Some(run_trials(&base, planner, mode, cfg.trials, index * cfg.trials as u64)?);
        Ok(())
    })();
    if let Err(e) = result {
        row.flag = e.to_string();
    }
    row
}

/// Rate sweep over every (channel, `p_Z`, `n`, mode) in the config.
///
/// A failing point still yields a row, flagged and with whatever part was
/// computed before the failure.
pub fn sweep_rates(cfg: &ExperimentConfig, planner: &Planner) -> Vec<SweepRow> {
    let mut points = Vec::new();
    for ch in &cfg.channels {
        for &p_z in &cfg.pz_list {
            for &n in &cfg.n_list {
                for &mode in &cfg.modes {
                    points.push((ch, p_z, n, mode));
                }
            }
        }
    }
    points
        .into_par_iter()
        .enumerate()
        .map(|(i, (ch, p_z, n, mode))| sweep_point(cfg, planner, ch, mode, p_z, n, i as u64))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Smallest-`M` parameters found for one `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetRow {
    pub q: f64,
    pub ell_target: u64,
    /// `None` when no `(n, k)` in range reaches the target.
    pub best: Option<BudgetPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPoint {
    pub m: f64,
    pub n: u64,
    pub k: u64,
    pub q_tol_z: f64,
    pub ell: u64,
    pub eps_rob: f64,
}

pub const BUDGET_HEADER: &str = "q,ell_target,m_star,n,k,q_tol_z,l_gs,eps_rob,flag";

impl BudgetRow {
    pub fn to_csv(&self) -> String {
        match &self.best {
            Some(b) => format!("{},{},{:.3},{},{},{:.6},{},{:.6e},", self.q, self.ell_target, b.m, b.n, b.k, b.q_tol_z, b.ell, b.eps_rob),
            None => format!("{},{},,,,,,,infeasible", self.q, self.ell_target),
        }
    }
}

/// Smallest threshold whose robustness bound is at most `eps_rob_max`.
pub fn tolerance_for_robustness(k: u64, q: f64, eps_rob_max: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let rate = ((1.0 - q) / q).ln() / (1.0 - 2.0 * q);
    q + ((1.0 / eps_rob_max).ln() / (k as f64 * rate)).sqrt()
}

fn k_grid() -> Vec<u64> {
    let mut ks = vec![1u64];
    while let Some(&last) = ks.last() {
        let next = ((last as f64 * BUDGET_K_STEP).ceil() as u64).max(last + 1);
        if next > BUDGET_MAX_K {
            break;
        }
        ks.push(next);
    }
    ks
}

/// Smallest `n` with `ℓ_GS ≥ target`, by doubling then bisection.
fn min_n_for(k: u64, q: f64, q_tol: f64, target: u64, budget: &SecurityBudget) -> Result<Option<u64>, BoundsError> {
    let ell = |n: u64| -> Result<u64, BoundsError> {
        let l_ec = leakage_estimate(n, q)?;
        secret_len_gs(n, k, q_tol, l_ec, budget)
    };
    if target == 0 {
        return Ok(Some(1));
    }
    let mut hi = 1u64;
    while ell(hi)? < target {
        hi *= 2;
        if hi > BUDGET_MAX_N {
            return Ok(None);
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ell(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// For each `Q` (with `Q̄_X = Q̄_Z = Q`), the fewest received qubits
/// `M(n, k)` giving a general-secrecy key of `ell_target` bits.
///
/// `Q_tol_Z` is the smallest threshold with `ε_rob ≤ eps_rob_max`: below it
/// the honest channel aborts too often, above it the key only shrinks.
pub fn min_qubits_for_length(ell_target: u64, q_grid: &[f64], budget: &SecurityBudget, eps_rob_max: f64) -> Result<Vec<BudgetRow>, HarnessError> {
    let ks = k_grid();
    q_grid
        .par_iter()
        .map(|&q| {
            let mut best: Option<BudgetPoint> = None;
            for &k in &ks {
                let q_tol = tolerance_for_robustness(k, q, eps_rob_max);
                if q_tol >= 0.5 {
                    continue;
                }
                if let Some(n) = min_n_for(k, q, q_tol, ell_target, budget)? {
                    let m = expected_qubits(n, k);
                    if best.is_none_or(|b| m < b.m) {
                        let ell = secret_len_gs(n, k, q_tol, leakage_estimate(n, q)?, budget)?;
                        let eps_rob = if q > 0.0 { eps_rob_bound(k, q_tol, q) } else { 0.0 };
                        best = Some(BudgetPoint { m, n, k, q_tol_z: q_tol, ell, eps_rob });
                    }
                }
            }
            Ok(BudgetRow { q, ell_target, best })
        })
        .collect()
}

pub fn budget_csv(rows: &[BudgetRow]) -> String {
    let mut out = String::from(BUDGET_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Closed-form bound table: each (channel, mode, `n`) at every configured
/// `p_Z`, plus one row with `p_Z` optimized.
pub fn bound_table(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    let mut out = format!("preset,mode,selection,{},asymptotic_rate\n", BoundReport::<f64>::CSV_HEADER);
    for ch in &cfg.channels {
        let (qx, qz) = ch.model.effective_qber();
        let asym = asymptotic_rate(qx, qz)?;
        for &mode in &cfg.modes {
            for &n in &cfg.n_list {
                for &p_z in &cfg.pz_list {
                    let plan = plan_point(cfg, &ch.model, mode, n, p_z)?;
                    let p = plan.params;
                    let r = BoundReport::evaluate(n as u64, p.k as u64, p.q_tol_z, p.q_max_x, qz, plan.l_ec, &cfg.budget)?;
                    out.push_str(&format!("{},{},fixed,{},{:.6}\n", ch.name, mode.as_str(), r.csv_row(), asym));
                }
                let opt = optimize_rate(mode, n as u64, qx, qz, &cfg.budget, cfg.optimizer.settings(mode))?;
                let r = BoundReport::evaluate(n as u64, opt.k, opt.q_tol_z, opt.q_max_x, qz, opt.l_ec, &cfg.budget)?;
                out.push_str(&format!("{},{},optimal,{},{:.6}\n", ch.name, mode.as_str(), r.csv_row(), asym));
            }
        }
    }
    Ok(out)
}

pub const SESSION_HEADER: &str = "preset,session,status,slots_sent,detections,x_matches,z_matches,q_z_est,leakage,schedule,raw_key_errors,residual_key_errors,l_gs,l_ps,keys_equal";

/// One CSV line describing a finished session.
pub fn session_row(preset: &str, cfg: &SessionConfig, out: &SessionOutcome) -> String {
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    let q_est = out.estimation_errors.map_or(String::new(), |e| format!("{:.6}", e as f64 / cfg.params.k as f64));
    let schedule = out.schedule.as_ref().map_or(String::new(), |s| s.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        preset,
        cfg.session,
        out.status.as_str(),
        out.counts.slots_sent,
        out.counts.detections,
        out.counts.x_matches,
        out.counts.z_matches,
        q_est,
        opt(out.leakage),
        schedule,
        opt(out.raw_key_errors),
        opt(out.residual_key_errors),
        out.lengths.0,
        out.lengths.1,
        out.alice == out.bob
    )
}

/// `n h2(Q)`, the reference leakage for reconciliation efficiency.
pub fn shannon_leakage(n: usize, q: f64) -> f64 {
    Probability::new(q).map_or(f64::NAN, |p| n as f64 * binary_entropy(p))
}

/// Expected sift fractions `(η p_X², η p_Z²)` per slot.
pub fn expected_sift_fractions(model: &ChannelModel, params: &ProtocolParams) -> (f64, f64) {
    let eta = model.detection();
    (eta * params.basis_prob(Basis::X).powi(2), eta * params.basis_prob(Basis::Z).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::parse("preset = b\nn = 2000\np_z = 0.4\nmodes = gs,ps\ntrials = 2\nseed = 5").unwrap()
    }

    #[test]
    fn sweep_is_reproducible() {
        let cfg = small_config();
        let a = sweep_csv(&sweep_rates(&cfg, &Planner::default()));
        let b = sweep_csv(&sweep_rates(&cfg, &Planner::default()));
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 3);
        let cols = SWEEP_HEADER.split(',').count();
        assert!(a.lines().all(|l| l.split(',').count() == cols), "{a}");
    }

    #[test]
    fn failing_point_is_flagged() {
        let mut cfg = small_config();
        cfg.q_tol_z = Some(0.45);
        cfg.q_max_x = Some(0.3);
        let rows = sweep_rates(&cfg, &Planner::default());
        assert!(rows.iter().all(|r| r.flag.is_empty()));
        assert!(rows.iter().all(|r| r.summary.as_ref().unwrap().infeasible == 2));
        cfg.q_tol_z = Some(0.7);
        let rows = sweep_rates(&cfg, &Planner::default());
        assert!(rows.iter().all(|r| !r.flag.is_empty() && r.summary.is_none()));
        let cols = SWEEP_HEADER.split(',').count();
        assert!(rows.iter().all(|r| r.to_csv().split(',').count() == cols));
    }

    #[test]
    fn zero_target_gives_minimal_point() {
        let rows = min_qubits_for_length(0, &[0.01], &SecurityBudget::default(), 0.05).unwrap();
        let b = rows[0].best.unwrap();
        // smallest k whose threshold stays below 1/2
        let k0 = k_grid().into_iter().find(|&k| tolerance_for_robustness(k, 0.01, 0.05) < 0.5).unwrap();
        assert_eq!((b.n, b.k), (1, k0));
        assert_eq!(b.m, expected_qubits(1, k0));
    }

    #[test]
    fn high_error_budget_is_infeasible() {
        let rows = min_qubits_for_length(1000, &[0.12], &SecurityBudget::default(), 0.05).unwrap();
        assert!(rows[0].best.is_none());
        assert!(rows[0].to_csv().ends_with("infeasible"));
    }

    #[test]
    fn robustness_tolerance_hits_cap() {
        for (k, q) in [(100u64, 0.02), (5000, 0.05)] {
            let t = tolerance_for_robustness(k, q, 0.05);
            assert!((eps_rob_bound(k, t, q) - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_table_shape() {
        let cfg = ExperimentConfig::parse("preset = a\nn = 10000\np_z = 0.2,0.4\nmodes = gs").unwrap();
        let t = bound_table(&cfg).unwrap();
        assert_eq!(t.lines().count(), 4);
        assert!(t.lines().nth(3).unwrap().contains(",optimal,"));
    }
}
