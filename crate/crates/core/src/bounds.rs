//! Finite-key secret lengths, robustness, qubit cost and rate optimization.
//!
//! Two secrecy notions are supported. General secrecy bounds the trace
//! distance to an ideal key against arbitrary attacks (parameter `ε_sec`).
//! Pragmatic secrecy bounds Eve's equivocation under intercept-and-resend
//! attacks (parameter `δ_sec`). Comparisons use `δ_sec = (2 / ln 2) ε_sec²`.

use std::collections::HashMap;

use thiserror::Error;

use crate::numerics::{binary_entropy, clipped_entropy, from_u64, lit, reg_inc_beta, NumericsError, Probability, Scalar};
use crate::reconciliation::{choose_qmax, ReconError};

/// `L_EC ≈ LEAKAGE_FACTOR · n · h2(Q_X)` when no reconciliation is run.
pub const LEAKAGE_FACTOR: f64 = 1.1;
/// Grid size for the maximization over the attack rate `q`.
pub const Q_GRID: usize = 1024;
/// Rates within this distance of the best count as ties.
pub const RATE_TIE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("{name} = {value} must lie in (0, 1)")]
    Budget { name: &'static str, value: f64 },
    #[error("n and k must be at least 1 (n = {n}, k = {k})")]
    Counts { n: u64, k: u64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Reconciliation(#[from] ReconError),
}

/// Which secrecy definition a key length refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SecrecyMode {
    General,
    Pragmatic,
}

impl SecrecyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SecrecyMode::General => "gs",
            SecrecyMode::Pragmatic => "ps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gs" | "general" => Some(SecrecyMode::General),
            "ps" | "pragmatic" => Some(SecrecyMode::Pragmatic),
            _ => None,
        }
    }
}

/// Tolerances `(ε_sec, ε_cor, P_fail)`; `δ_sec` is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityBudget<T = f64> {
    eps_sec: T,
    eps_cor: T,
    p_fail: T,
}

fn open_unit<T: Scalar>(name: &'static str, v: T) -> Result<T, BoundsError> {
    if v > T::zero() && v < T::one() {
        Ok(v)
    } else {
        Err(BoundsError::Budget { name, value: v.to_f64().unwrap_or(f64::NAN) })
    }
}

impl<T: Scalar> SecurityBudget<T> {
    pub fn new(eps_sec: T, eps_cor: T, p_fail: T) -> Result<Self, BoundsError> {
        Ok(Self {
            eps_sec: open_unit("eps_sec", eps_sec)?,
            eps_cor: open_unit("eps_cor", eps_cor)?,
            p_fail: open_unit("p_fail", p_fail)?,
        })
    }

    pub fn eps_sec(&self) -> T {
        self.eps_sec
    }

    pub fn eps_cor(&self) -> T {
        self.eps_cor
    }

    pub fn p_fail(&self) -> T {
        self.p_fail
    }

    /// `(2 / ln 2) ε_sec²`.
    pub fn delta_sec(&self) -> T {
        lit::<T>(2.0) / T::LN_2() * self.eps_sec * self.eps_sec
    }

    /// Bits of the error-verification hash, `⌈log2(P_fail / ε_cor)⌉`.
    pub fn verification_len(&self) -> u64 {
        (self.p_fail / self.eps_cor).log2().ceil().max(T::zero()).to_u64().unwrap_or(0)
    }

    /// `log2(2 P_fail / (ε_sec² ε_cor))`.
    pub fn gs_penalty(&self) -> T {
        (lit::<T>(2.0) * self.p_fail / (self.eps_sec * self.eps_sec * self.eps_cor)).log2()
    }
}

impl<T: Scalar> Default for SecurityBudget<T> {
    /// `ε_sec = ε_cor = 1e-10`, `P_fail = 1e-3`.
    fn default() -> Self {
        Self { eps_sec: lit(1e-10), eps_cor: lit(1e-10), p_fail: lit(1e-3) }
    }
}

fn check_counts(n: u64, k: u64) -> Result<(), BoundsError> {
    if n == 0 || k == 0 {
        Err(BoundsError::Counts { n, k })
    } else {
        Ok(())
    }
}

/// Statistical deviation `μ = sqrt((n+k)/(nk) · (k+1)/k · ln(2/ε_sec))`.
pub fn mu<T: Scalar>(n: u64, k: u64, eps_sec: T) -> Result<T, BoundsError> {
    check_counts(n, k)?;
    let eps = open_unit("eps_sec", eps_sec)?;
    let (nf, kf) = (from_u64::<T>(n), from_u64::<T>(k));
    Ok(((nf + kf) / (nf * kf) * (kf + T::one()) / kf * (lit::<T>(2.0) / eps).ln()).sqrt())
}

/// Leakage estimate `1.1 · n · h2(Q_X)` used when planning without a run.
pub fn leakage_estimate<T: Scalar>(n: u64, q_x: T) -> Result<T, BoundsError> {
    Ok(lit::<T>(LEAKAGE_FACTOR) * from_u64::<T>(n) * binary_entropy(Probability::new(q_x)?))
}

/// General-secrecy key length
/// `max(0, ⌊n(1 − h̃2(Q_tol + μ)) − L_EC − log2(2P_fail / (ε_sec² ε_cor))⌋)`.
pub fn secret_len_gs<T: Scalar>(n: u64, k: u64, q_tol_z: T, l_ec: T, budget: &SecurityBudget<T>) -> Result<u64, BoundsError> {
    let m = mu(n, k, budget.eps_sec())?;
    let x = q_tol_z + m;
    if x >= lit(0.5) {
        return Ok(0);
    }
    let raw = from_u64::<T>(n) * (T::one() - clipped_entropy(x)?) - l_ec - budget.gs_penalty();
    Ok(raw.floor().max(T::zero()).to_u64().unwrap_or(0))
}

/// Reconciled-key length left for pragmatic secrecy,
/// `n − L_EC − ⌈log2(P_fail / ε_cor)⌉`, floored; may be negative.
pub fn n_ec<T: Scalar>(n: u64, l_ec: T, budget: &SecurityBudget<T>) -> i64 {
    let after = (from_u64::<T>(n) - l_ec).floor().to_i64().unwrap_or(i64::MIN);
    after - budget.verification_len() as i64
}

/// `I_q(a+1, n−a) · I_{1−q/2}(k(1−Q_tol), k Q_tol + 1)`: probability that an
/// attack on a fraction `q` causes more than `a` key errors and still passes
/// the estimation test.
pub fn f_inner<T: Scalar>(q: Probability<T>, a: u64, n: u64, k: u64, q_tol_z: T) -> Result<T, BoundsError> {
    Ok(key_factor(q.value(), a, n)? * test_factor(q.value(), k, q_tol_z)?)
}

fn key_factor<T: Scalar>(q: T, a: u64, n: u64) -> Result<T, BoundsError> {
    if a >= n {
        return Ok(T::zero());
    }
    Ok(reg_inc_beta(q, from_u64(a + 1), from_u64(n - a))?)
}

fn test_factor<T: Scalar>(q: T, k: u64, q_tol_z: T) -> Result<T, BoundsError> {
    let kf = from_u64::<T>(k);
    let x = T::one() - q / lit(2.0);
    Ok(reg_inc_beta(x, kf * (T::one() - q_tol_z), kf * q_tol_z + T::one())?)
}

/// Pragmatic-secrecy key length search for one `(n, k, Q_tol)`.
///
/// Caches `max_q f_inner` per `a` and the test factor on the `q` grid.
#[derive(Debug, Clone)]
pub struct PsCalculator<T = f64> {
    n: u64,
    k: u64,
    q_tol_z: T,
    grid: Vec<T>,
    test_on_grid: Vec<T>,
    cache: HashMap<u64, T>,
}

impl<T: Scalar> PsCalculator<T> {
    pub fn new(n: u64, k: u64, q_tol_z: T) -> Result<Self, BoundsError> {
        check_counts(n, k)?;
        let last = from_u64::<T>(Q_GRID as u64 - 1);
        let grid: Vec<T> = (0..Q_GRID).map(|i| from_u64::<T>(i as u64) / last).collect();
        let test_on_grid = grid.iter().map(|&q| test_factor(q, k, q_tol_z)).collect::<Result<_, _>>()?;
        Ok(Self { n, k, q_tol_z, grid, test_on_grid, cache: HashMap::new() })
    }

    /// `max_q f_inner(q, a)`: dense grid, then ternary refinement inside the
    /// bracket around the best grid point. Non-increasing in `a`.
    pub fn max_attack_product(&mut self, a: u64) -> Result<T, BoundsError> {
        if let Some(&v) = self.cache.get(&a) {
            return Ok(v);
        }
        let mut best = (0, T::zero());
        for (i, (&q, &t)) in self.grid.iter().zip(&self.test_on_grid).enumerate() {
            if t <= best.1 {
                continue;
            }
            let v = key_factor(q, a, self.n)? * t;
            if v > best.1 {
                best = (i, v);
            }
        }
        let mut value = best.1;
        if value > T::zero() {
            let mut lo = self.grid[best.0.saturating_sub(1)];
            let mut hi = self.grid[(best.0 + 1).min(Q_GRID - 1)];
            let eval = |q: T| -> Result<T, BoundsError> { f_inner(Probability::new(q)?, a, self.n, self.k, self.q_tol_z) };
            let third = lit::<T>(1.0 / 3.0);
            for _ in 0..60 {
                let m1 = lo + (hi - lo) * third;
                let m2 = hi - (hi - lo) * third;
                let (v1, v2) = (eval(m1)?, eval(m2)?);
                value = value.max(v1).max(v2);
                if v1 < v2 {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
        }
        self.cache.insert(a, value);
        Ok(value)
    }

    /// `f(a, b) = b · max_q f_inner + 2^{−(n_EC − b − a)} / ln 2`.
    pub fn f_outer(&mut self, a: u64, b: u64, n_ec: u64) -> Result<T, BoundsError> {
        let g = self.max_attack_product(a)?;
        Ok(from_u64::<T>(b) * g + tail_term(n_ec as i64 - b as i64 - a as i64))
    }

    /// Largest `b` with `min_a f(a, b) ≤ δ_sec`, or 0.
    pub fn secret_len(&mut self, n_ec: i64, delta_sec: T) -> Result<u64, BoundsError> {
        if n_ec <= 0 || delta_sec.is_nan() || delta_sec <= T::zero() {
            return Ok(0);
        }
        let n_ec = n_ec as u64;
        // smallest slack T0 with 2^{-T0} / ln 2 <= δ
        let t0 = (T::one() / (delta_sec * T::LN_2())).log2().ceil().max(T::zero()).to_u64().unwrap_or(u64::MAX);
        if n_ec <= t0 {
            return Ok(0);
        }
        let cap = |a: u64| n_ec.saturating_sub(a).saturating_sub(t0);
        // a0: first a at which the slack cap alone satisfies the g-term
        let (mut lo, mut hi) = (0u64, n_ec - t0);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if from_u64::<T>(cap(mid)) * self.max_attack_product(mid)? <= delta_sec {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let a0 = lo;
        let mut best = 0u64;
        let mut previous_g = None;
        let mut a = a0.saturating_sub(3);
        while a < n_ec && (a < a0 || cap(a) > best) {
            let g = self.max_attack_product(a)?;
            if let Some(p) = previous_g {
                debug_assert!(g <= p * lit(1.0 + 1e-9) + T::min_positive_value(), "attack product must not grow with a");
            }
            previous_g = Some(g);
            best = best.max(self.best_b(a, g, n_ec, delta_sec, cap(a)));
            a += 1;
        }
        Ok(best)
    }

    fn best_b(&self, a: u64, g: T, n_ec: u64, delta: T, cap: u64) -> u64 {
        let f = |b: u64| from_u64::<T>(b) * g + tail_term(n_ec as i64 - b as i64 - a as i64);
        if cap == 0 || f(1) > delta {
            return 0;
        }
        let (mut lo, mut hi) = (1u64, cap);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if f(mid) <= delta {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }
}

fn tail_term<T: Scalar>(exponent: i64) -> T {
    lit::<T>(2.0).powf(-from_i64::<T>(exponent)) / T::LN_2()
}

fn from_i64<T: Scalar>(v: i64) -> T {
    T::from_i64(v).expect("integer representable in scalar type")
}

/// Pragmatic-secrecy key length for reconciled length `n_ec`.
pub fn secret_len_ps<T: Scalar>(n: u64, k: u64, q_tol_z: T, n_ec: i64, delta_sec: T) -> Result<u64, BoundsError> {
    PsCalculator::new(n, k, q_tol_z)?.secret_len(n_ec, delta_sec)
}

/// Key length under either secrecy mode with matched budgets.
pub fn secret_length<T: Scalar>(
    mode: SecrecyMode,
    n: u64,
    k: u64,
    q_tol_z: T,
    l_ec: T,
    budget: &SecurityBudget<T>,
) -> Result<u64, BoundsError> {
    match mode {
        SecrecyMode::General => secret_len_gs(n, k, q_tol_z, l_ec, budget),
        SecrecyMode::Pragmatic => secret_len_ps(n, k, q_tol_z, n_ec(n, l_ec, budget), budget.delta_sec()),
    }
}

/// Bound on the honest abort probability,
/// `exp[−k (Q_tol − Q̄)² / (1 − 2Q̄) · ln((1 − Q̄)/Q̄)]`.
///
/// `Q̄ = 0` returns the limit 0; `Q_tol ≤ Q̄` returns 1.
pub fn eps_rob_bound<T: Scalar>(k: u64, q_tol_z: T, q_bar_z: T) -> T {
    if q_tol_z <= q_bar_z {
        return T::one();
    }
    if q_bar_z <= T::zero() {
        return T::zero();
    }
    let d = q_tol_z - q_bar_z;
    let exponent = from_u64::<T>(k) * d * d / (T::one() - lit::<T>(2.0) * q_bar_z) * ((T::one() - q_bar_z) / q_bar_z).ln();
    (-exponent).exp().min(T::one())
}

/// Expected detections needed to fill both quotas, `n + k + 2 sqrt(nk)`.
pub fn expected_qubits<T: Scalar>(n: u64, k: u64) -> T {
    let (nf, kf) = (from_u64::<T>(n), from_u64::<T>(k));
    nf + kf + lit::<T>(2.0) * (nf * kf).sqrt()
}

/// `r = (1 − ε_rob) ℓ / M(n, k)`.
pub fn key_rate<T: Scalar>(ell: u64, n: u64, k: u64, eps_rob: T) -> T {
    (T::one() - eps_rob) * from_u64::<T>(ell) / expected_qubits::<T>(n, k)
}

/// `max(0, 1 − h2(Q_X) − h2(Q_Z))`.
pub fn asymptotic_rate<T: Scalar>(q_x: T, q_z: T) -> Result<T, BoundsError> {
    let r = T::one() - binary_entropy(Probability::new(q_x)?) - binary_entropy(Probability::new(q_z)?);
    Ok(r.max(T::zero()))
}

/// Search effort for [`optimize_tolerance`] and [`optimize_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizerSettings {
    pub tolerance_grid: usize,
    pub pz_grid: usize,
    pub refine_iterations: usize,
}

impl OptimizerSettings {
    /// Dense search; cheap for general secrecy.
    pub const FINE: Self = Self { tolerance_grid: 200, pz_grid: 80, refine_iterations: 40 };
    /// Coarser search sized for pragmatic-secrecy evaluations.
    pub const COARSE: Self = Self { tolerance_grid: 24, pz_grid: 16, refine_iterations: 16 };

    pub fn for_mode(mode: SecrecyMode) -> Self {
        match mode {
            SecrecyMode::General => Self::FINE,
            SecrecyMode::Pragmatic => Self::COARSE,
        }
    }
}

/// Best estimation threshold for fixed `(n, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceOptimum<T = f64> {
    pub q_tol_z: T,
    pub ell: u64,
    pub eps_rob: T,
    pub rate: T,
}

/// Grid plus golden-section search for the rate-maximizing `Q_tol` in
/// `(Q̄_Z, 1/2)`. Ties go to the smaller threshold.
#[allow(clippy::too_many_arguments)]
pub fn optimize_tolerance<T: Scalar>(
    mode: SecrecyMode,
    n: u64,
    k: u64,
    q_bar_z: T,
    l_ec: T,
    budget: &SecurityBudget<T>,
    settings: OptimizerSettings,
) -> Result<ToleranceOptimum<T>, BoundsError> {
    check_counts(n, k)?;
    let eval = |q_tol: T| -> Result<ToleranceOptimum<T>, BoundsError> {
        let ell = secret_length(mode, n, k, q_tol, l_ec, budget)?;
        let eps_rob = eps_rob_bound(k, q_tol, q_bar_z);
        Ok(ToleranceOptimum { q_tol_z: q_tol, ell, eps_rob, rate: key_rate(ell, n, k, eps_rob) })
    };
    let span = lit::<T>(0.5) - q_bar_z;
    let steps = from_u64::<T>(settings.tolerance_grid as u64 + 1);
    let at = |i: usize| q_bar_z + span * from_u64::<T>(i as u64) / steps;
    let grid: Vec<ToleranceOptimum<T>> = (1..=settings.tolerance_grid).map(|i| eval(at(i))).collect::<Result<_, _>>()?;
    let (best_i, _) = argmax_first(grid.iter().map(|o| o.rate));
    let mut best = grid[best_i];
    if best.rate > T::zero() {
        let refined = golden_max(at(best_i), at(best_i + 2), settings.refine_iterations, |q| {
            eval(q).map(|o| (o.rate, o))
        })?;
        if refined.rate > best.rate + lit(RATE_TIE) {
            best = refined;
        }
    }
    Ok(best)
}

fn argmax_first<T: Scalar>(values: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_infinity());
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Golden-section maximization on `[lo, hi]`; returns the best point seen.
fn golden_max<T: Scalar, P: Copy, F>(mut lo: T, mut hi: T, iterations: usize, mut f: F) -> Result<P, BoundsError>
where
    F: FnMut(T) -> Result<(T, P), BoundsError>,
{
    let ratio = lit::<T>((5f64.sqrt() - 1.0) / 2.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = if f2.0 > f1.0 { f2 } else { f1 };
    for _ in 0..iterations {
        if f1.0 >= f2.0 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
            if f1.0 > best.0 {
                best = f1;
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
            if f2.0 > best.0 {
                best = f2;
            }
        }
    }
    Ok(best.1)
}

/// Result of [`optimize_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptimum<T = f64> {
    pub rate: T,
    pub p_z: T,
    pub k: u64,
    pub q_tol_z: T,
    pub q_max_x: T,
    pub qmax_fallback: bool,
    pub ell: u64,
    pub eps_rob: T,
    pub l_ec: T,
}

/// Estimation quota for key quota `n` at basis probability `p_Z`:
/// `round(n (p_Z / p_X)²)`, at least 1.
pub fn quota_for_pz<T: Scalar>(n: u64, p_z: T) -> u64 {
    let ratio = p_z / (T::one() - p_z);
    (from_u64::<T>(n) * ratio * ratio).round().max(T::one()).to_u64().unwrap_or(u64::MAX)
}

/// Maximizes the key rate over `p_Z` and `Q_tol` with the planning leakage
/// `1.1 n h2(Q̄_X)`. `Q_max_X` comes from the reconciliation failure budget;
/// it does not enter the rate under this leakage model.
///
/// Returns a zero rate when no point yields a key. Among points within
/// `1e-6` of the best rate the smallest `p_Z` wins.
pub fn optimize_rate<T: Scalar>(
    mode: SecrecyMode,
    n: u64,
    q_bar_x: T,
    q_bar_z: T,
    budget: &SecurityBudget<T>,
    settings: OptimizerSettings,
) -> Result<RateOptimum<T>, BoundsError> {
    check_counts(n, 1)?;
    let l_ec = leakage_estimate(n, q_bar_x)?;
    let qmax = choose_qmax(q_bar_x, n as usize, budget.p_fail())?;
    let eval = |p_z: T| -> Result<RateOptimum<T>, BoundsError> {
        let k = quota_for_pz(n, p_z);
        let tol = optimize_tolerance(mode, n, k, q_bar_z, l_ec, budget, settings)?;
        Ok(RateOptimum {
            rate: tol.rate,
            p_z,
            k,
            q_tol_z: tol.q_tol_z,
            q_max_x: qmax.q_max,
            qmax_fallback: qmax.fallback,
            ell: tol.ell,
            eps_rob: tol.eps_rob,
            l_ec,
        })
    };
    // log-spaced p_Z from where k reaches 1 up to 1/2
    let lo = (T::one() / from_u64::<T>(n).sqrt()).min(lit(0.25));
    let hi = lit::<T>(0.5);
    let steps = settings.pz_grid.max(2);
    let at = |i: usize| lo * (hi / lo).powf(from_u64::<T>(i as u64) / from_u64::<T>(steps as u64 - 1));
    let mut seen: Vec<RateOptimum<T>> = (0..steps).map(|i| eval(at(i))).collect::<Result<_, _>>()?;
    let (best_i, best_rate) = argmax_first(seen.iter().map(|o| o.rate));
    if best_rate > T::zero() {
        let refined = golden_max(at(best_i.saturating_sub(1)), at((best_i + 1).min(steps - 1)), settings.refine_iterations, |p| {
            eval(p).map(|o| (o.rate, o))
        })?;
        seen.push(refined);
    }
    let top = seen.iter().map(|o| o.rate).fold(T::zero(), T::max);
    let pick = seen
        .iter()
        .filter(|o| o.rate >= top - lit(RATE_TIE))
        .min_by(|a, b| a.p_z.partial_cmp(&b.p_z).expect("finite p_Z"))
        .copied()
        .expect("grid is non-empty");
    if top <= T::zero() {
        return Ok(RateOptimum { rate: T::zero(), ell: 0, ..pick });
    }
    Ok(pick)
}

/// One evaluated parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport<T = f64> {
    pub n: u64,
    pub k: u64,
    pub p_z: T,
    pub q_tol_z: T,
    pub q_max_x: T,
    pub l_ec: T,
    pub mu: T,
    pub l_gs: u64,
    pub l_ps: u64,
    pub eps_rob: T,
    pub m: T,
    pub r_gs: T,
    pub r_ps: T,
}

impl<T: Scalar> BoundReport<T> {
    pub const CSV_HEADER: &'static str = "n,k,p_z,q_tol_z,q_max_x,l_ec,mu,l_gs,l_ps,eps_rob,m,r_gs,r_ps";

    /// Evaluates both secrecy modes at one point with matched budgets.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        n: u64,
        k: u64,
        q_tol_z: T,
        q_max_x: T,
        q_bar_z: T,
        l_ec: T,
        budget: &SecurityBudget<T>,
    ) -> Result<Self, BoundsError> {
        let l_gs = secret_len_gs(n, k, q_tol_z, l_ec, budget)?;
        let l_ps = secret_len_ps(n, k, q_tol_z, n_ec(n, l_ec, budget), budget.delta_sec())?;
        let eps_rob = eps_rob_bound(k, q_tol_z, q_bar_z);
        let (nf, kf) = (from_u64::<T>(n), from_u64::<T>(k));
        let root = (kf / nf).sqrt();
        Ok(Self {
            n,
            k,
            p_z: root / (T::one() + root),
            q_tol_z,
            q_max_x,
            l_ec,
            mu: mu(n, k, budget.eps_sec())?,
            l_gs,
            l_ps,
            eps_rob,
            m: expected_qubits(n, k),
            r_gs: key_rate(l_gs, n, k, eps_rob),
            r_ps: key_rate(l_ps, n, k, eps_rob),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3},{:.6},{},{},{:.6e},{:.3},{:.6},{:.6}",
            self.n,
            self.k,
            self.p_z,
            self.q_tol_z,
            self.q_max_x,
            self.l_ec,
            self.mu,
            self.l_gs,
            self.l_ps,
            self.eps_rob,
            self.m,
            self.r_gs,
            self.r_ps
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> SecurityBudget {
        SecurityBudget::default()
    }

    #[test]
    fn budget_validation_and_derived_values() {
        assert!(SecurityBudget::new(0.0, 1e-10, 1e-3).is_err());
        assert!(SecurityBudget::new(1e-10, 1.0, 1e-3).is_err());
        let b = budget();
        assert_eq!(b.verification_len(), 24);
        assert!((b.delta_sec() - 2.0 / std::f64::consts::LN_2 * 1e-20).abs() < 1e-32);
    }

    #[test]
    fn mu_examples() {
        let m: f64 = mu(100_000, 978, 1e-10).unwrap();
        assert!((m - 0.1566).abs() < 5e-4, "{m}");
        let m: f64 = mu(10_000, 10_000, 1e-10).unwrap();
        assert!((m - 0.0689).abs() < 5e-5, "{m}");
        let lim = (2e10f64.ln() / 1e4).sqrt();
        assert!((mu(10_000, 1 << 40, 1e-10).unwrap() - lim).abs() < 1e-6);
        assert!(mu(0, 5, 1e-10).is_err());
    }

    #[test]
    fn gs_vanishes_when_threshold_too_high() {
        assert_eq!(secret_len_gs(1000, 1000, 0.45, 0.0, &budget()).unwrap(), 0);
    }

    #[test]
    fn gs_monotone() {
        let b = budget();
        let mut last = u64::MAX;
        for i in 0..40 {
            let l = secret_len_gs(100_000, 10_000, 0.005 * i as f64, 5000.0, &b).unwrap();
            assert!(l <= last);
            last = l;
        }
        let mut last = u64::MAX;
        for i in 0..40 {
            let l = secret_len_gs(100_000, 10_000, 0.03, 1000.0 * i as f64, &b).unwrap();
            assert!(l <= last);
            last = l;
        }
        let mut last = 0;
        for e in 2..30 {
            let b = SecurityBudget::new(10f64.powi(-e), 1e-10, 1e-3).unwrap();
            let l = secret_len_gs(100_000, 10_000, 0.03, 5000.0, &b).unwrap();
            if e > 2 {
                assert!(l <= last);
            }
            last = l;
        }
        let mut last = 0;
        for n in [1_000u64, 10_000, 100_000, 1_000_000] {
            let l = secret_len_gs(n, n / 10, 0.03, 0.1 * n as f64, &b).unwrap();
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn f_inner_limits() {
        let z = f_inner(Probability::zero(), 3, 10, 5, 0.1).unwrap();
        assert_eq!(z, 0.0);
        let one: f64 = f_inner(Probability::one(), 3, 10, 5, 0.1).unwrap();
        let second = reg_inc_beta(0.5, 4.5, 1.5).unwrap();
        assert!((one - second).abs() < 1e-14);
    }

    #[test]
    fn attack_product_analytic_maximum() {
        let mut calc = PsCalculator::new(2, 1, 0.0).unwrap();
        let g: f64 = calc.max_attack_product(0).unwrap();
        assert!((g - 16.0 / 27.0).abs() < 1e-6, "{g}");
        let at: f64 = f_inner(Probability::new(2.0 / 3.0).unwrap(), 0, 2, 1, 0.0).unwrap();
        assert!((at - 16.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn attack_product_non_increasing_in_a() {
        let mut calc = PsCalculator::new(500, 200, 0.05).unwrap();
        let mut last = f64::INFINITY;
        for a in 0..500 {
            let g = calc.max_attack_product(a).unwrap();
            assert!(g <= last * (1.0 + 1e-9));
            last = g;
        }
    }

    #[test]
    fn f_outer_terms_monotone() {
        let mut calc = PsCalculator::new(1000, 300, 0.05).unwrap();
        let mut last = 0.0;
        for b in 0..200 {
            let f = calc.f_outer(40, b, 800).unwrap();
            assert!(f >= last);
            last = f;
        }
        // at fixed b the first term cannot grow with a, the tail term grows
        let mut last_g = f64::INFINITY;
        let mut last_t = 0.0;
        for a in 0..100 {
            let g = calc.max_attack_product(a).unwrap();
            let t: f64 = tail_term(800 - 100 - a as i64);
            assert!(g <= last_g * (1.0 + 1e-9));
            assert!(t > last_t);
            last_g = g;
            last_t = t;
        }
    }

    #[test]
    fn ps_secret_len_matches_definition() {
        let (n, k, q_tol) = (400u64, 200u64, 0.04);
        let delta = 1e-3;
        let n_ec = 300i64;
        let mut calc = PsCalculator::new(n, k, q_tol).unwrap();
        let ell = calc.secret_len(n_ec, delta).unwrap();
        assert!(ell > 0);
        // brute force over every a for ell and ell + 1
        let feasible = |calc: &mut PsCalculator, b: u64| {
            (0..n_ec as u64).any(|a| calc.f_outer(a, b, n_ec as u64).unwrap() <= delta)
        };
        assert!(feasible(&mut calc, ell));
        assert!(!feasible(&mut calc, ell + 1));
    }

    #[test]
    fn ps_slack_budget_limited_by_tail_term() {
        // an enormous budget: only the tail term and a = 0 matter
        let ell = secret_len_ps(1000, 1000, 0.0, 500, 1e6).unwrap();
        assert_eq!(ell, 500);
        assert_eq!(secret_len_ps(1000, 1000, 0.0, 0, 1e6).unwrap(), 0);
    }

    #[test]
    fn ps_dominates_gs_matched_budget() {
        let b = budget();
        for (n, qx, qz) in [(10_000u64, 0.024, 0.039), (100_000, 0.049, 0.06), (50_000, 0.003, 0.015)] {
            let l_ec = leakage_estimate(n, qx).unwrap();
            let k = quota_for_pz(n, 0.3);
            for q_tol in [qz + 0.005, qz + 0.02, qz + 0.05] {
                let gs = secret_len_gs(n, k, q_tol, l_ec, &b).unwrap();
                let ps = secret_len_ps(n, k, q_tol, n_ec(n, l_ec, &b), b.delta_sec()).unwrap();
                assert!(ps >= gs, "n={n} q_tol={q_tol}: ps {ps} < gs {gs}");
            }
        }
    }

    #[test]
    fn eps_rob_examples() {
        let e: f64 = eps_rob_bound(978, 0.09, 0.06);
        assert!((e - 0.0637898838226667).abs() < 1e-12, "{e}");
        assert!((e - 0.0639).abs() < 2e-4);
        assert_eq!(eps_rob_bound(100, 0.06, 0.06), 1.0);
        assert_eq!(eps_rob_bound(100, 0.06, 0.0), 0.0);
        assert!(eps_rob_bound(1 << 30, 0.07, 0.06) < 1e-300);
    }

    #[test]
    fn qubit_cost_and_rate() {
        assert_eq!(expected_qubits::<f64>(1_000_000, 10_000), 1_210_000.0);
        assert_eq!(expected_qubits::<f64>(500, 500), 2000.0);
        assert_eq!(key_rate(0, 10, 10, 0.1), 0.0);
    }

    #[test]
    fn asymptotic_examples() {
        let r: f64 = asymptotic_rate(0.003, 0.015).unwrap();
        assert!((r - 0.858175238055701).abs() < 1e-12, "{r}");
        assert!((r - 0.8581).abs() < 1e-4);
        assert!(asymptotic_rate(0.11, 0.11).unwrap() < 0.005);
        assert_eq!(asymptotic_rate(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(asymptotic_rate(0.2, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn optimizer_zero_above_threshold() {
        for n in [1_000u64, 100_000, 10_000_000] {
            let o = optimize_rate(SecrecyMode::General, n, 0.12, 0.12, &budget(), OptimizerSettings::FINE).unwrap();
            assert_eq!(o.rate, 0.0);
            assert_eq!(o.ell, 0);
        }
    }

    #[test]
    fn optimal_pz_grows_as_n_shrinks() {
        let b = budget();
        let big = optimize_rate(SecrecyMode::General, 10_000_000, 0.02, 0.04, &b, OptimizerSettings::FINE).unwrap();
        let small = optimize_rate(SecrecyMode::General, 100_000, 0.02, 0.04, &b, OptimizerSettings::FINE).unwrap();
        assert!(small.p_z > big.p_z);
        assert!(small.rate < big.rate);
    }

    #[test]
    fn bound_report_csv() {
        let r = BoundReport::evaluate(10_000, 1_000, 0.05, 0.03, 0.03, 1500.0, &budget()).unwrap();
        assert_eq!(r.csv_row().split(',').count(), BoundReport::<f64>::CSV_HEADER.split(',').count());
        assert_eq!(r.m, expected_qubits(10_000, 1_000));
        assert!(r.l_ps >= r.l_gs);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = mu::<f32>(100_000, 978, 1e-10).unwrap() as f64;
        let b = mu::<f64>(100_000, 978, 1e-10).unwrap();
        assert!((a - b).abs() < 1e-5);
        let l32 = secret_len_gs::<f32>(100_000, 10_000, 0.03, 5000.0, &SecurityBudget::default()).unwrap();
        let l64 = secret_len_gs::<f64>(100_000, 10_000, 0.03, 5000.0, &budget()).unwrap();
        assert!(l32.abs_diff(l64) <= 2);
    }
}
