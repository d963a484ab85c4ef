//! Special functions and binomial statistics shared by the bound and
//! reconciliation code.
//!
//! Everything here is generic over [`Scalar`] so the same code runs in `f32`
//! and `f64`. Entropies are in bits; natural logs only appear inside the
//! gamma/beta machinery.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating point type usable by the numeric core (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

#[inline]
pub(crate) fn from_u64<T: Scalar>(v: u64) -> T {
    T::from_u64(v).expect("integer representable in scalar type")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("continued fraction did not converge after {0} iterations")]
    NoConvergence(usize),
}

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Probability<T = f64>(T);

impl<T: Scalar> Probability<T> {
    pub fn new(value: T) -> Result<Self, NumericsError> {
        if value >= T::zero() && value <= T::one() {
            Ok(Self(value))
        } else {
            Err(NumericsError::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn zero() -> Self {
        Self(T::zero())
    }

    pub fn one() -> Self {
        Self(T::one())
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    /// `1 - p`.
    pub fn complement(self) -> Self {
        Self(T::one() - self.0)
    }
}

/// `-x log2 x - (1-x) log2 (1-x)`, with `0 log 0 = 0`.
pub fn binary_entropy<T: Scalar>(x: Probability<T>) -> T {
    let x = x.value();
    let term = |p: T| {
        if p <= T::zero() {
            T::zero()
        } else {
            -p * p.log2()
        }
    };
    let h = term(x) + term(T::one() - x);
    h.max(T::zero()).min(T::one())
}

/// Binary entropy clipped to 1 above one half.
pub fn clipped_entropy<T: Scalar>(x: T) -> Result<T, NumericsError> {
    if x.is_nan() || x < T::zero() {
        return Err(NumericsError::Domain(format!("clipped entropy needs x >= 0, got {x}")));
    }
    if x >= lit(0.5) {
        return Ok(T::one());
    }
    Ok(binary_entropy(Probability(x)))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    if x < lit(0.5) {
        // reflection
        let pi = T::PI();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    if x >= lit(10.0) {
        return stirling_base(x) + stirling_tail(x);
    }
    let x = x - T::one();
    let mut acc = lit::<T>(LANCZOS[0]);
    let t = x + lit(LANCZOS_G + 0.5);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc = acc + lit::<T>(c) / (x + from_u64(i as u64));
    }
    lit::<T>(0.5) * (lit::<T>(2.0) * T::PI()).ln() + (x + lit(0.5)) * t.ln() - t + acc.ln()
}

/// `(x - 1/2) ln x - x + ln(2 pi)/2`.
fn stirling_base<T: Scalar>(x: T) -> T {
    (x - lit(0.5)) * x.ln() - x + lit::<T>(0.5) * (lit::<T>(2.0) * T::PI()).ln()
}

/// Remainder of Stirling's series, accurate for `x >= 10`.
fn stirling_tail<T: Scalar>(x: T) -> T {
    let inv = T::one() / x;
    let inv2 = inv * inv;
    inv * (lit::<T>(1.0 / 12.0)
        - inv2
            * (lit::<T>(1.0 / 360.0)
                - inv2 * (lit::<T>(1.0 / 1260.0) - inv2 * (lit::<T>(1.0 / 1680.0) - inv2 * lit(1.0 / 1188.0)))))
}

/// `ln B(a, b)`.
pub fn ln_beta<T: Scalar>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln [x^a (1-x)^b / B(a, b)]`.
///
/// For large parameters the log terms are expanded around `a / (a + b)` so
/// the big `ln Gamma` values cancel analytically instead of numerically.
fn ln_beta_prefix<T: Scalar>(x: T, a: T, b: T) -> T {
    let ten = lit::<T>(10.0);
    if a >= ten && b >= ten {
        let s = a + b;
        let x0 = a / s;
        let y0 = b / s;
        let y = T::one() - x;
        let da = a * ((x - x0) / x0).ln_1p();
        let db = b * ((y - y0) / y0).ln_1p();
        da + db + lit::<T>(0.5) * (a * b / s).ln() - lit::<T>(0.5) * (lit::<T>(2.0) * T::PI()).ln()
            - stirling_tail(a)
            - stirling_tail(b)
            + stirling_tail(s)
    } else {
        a * x.ln() + b * (T::one() - x).ln() - ln_beta(a, b)
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Continued fraction (modified Lentz), evaluated on whichever side of
/// `(a + 1) / (a + b + 2)` converges fast.
pub fn reg_inc_beta<T: Scalar>(x: T, a: T, b: T) -> Result<T, NumericsError> {
    if a.is_nan() || b.is_nan() || a <= T::zero() || b <= T::zero() {
        return Err(NumericsError::Domain(format!("I_x(a, b) needs a, b > 0, got a={a}, b={b}")));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(NumericsError::Domain(format!("I_x(a, b) needs x in [0, 1], got {x}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    if x == T::one() {
        return Ok(T::one());
    }
    let two = lit::<T>(2.0);
    if x > (a + T::one()) / (a + b + two) {
        Ok(T::one() - beta_cf_scaled(T::one() - x, b, a)?)
    } else {
        beta_cf_scaled(x, a, b)
    }
}

/// `x^a (1-x)^b / (a B(a,b)) * CF(x; a, b)`.
fn beta_cf_scaled<T: Scalar>(x: T, a: T, b: T) -> Result<T, NumericsError> {
    let one = T::one();
    let two = lit::<T>(2.0);
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let max_iter = 1_000 + 10 * (a.max(b).to_f64().unwrap_or(0.0).sqrt() as usize);

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut f = d;

    for m in 1..=max_iter {
        let fm = from_u64::<T>(m as u64);
        let m2 = two * fm;

        let even = fm * (b - fm) * x / ((qam + m2) * (a + m2));
        d = one + even * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + even / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        f = f * d * c;

        let odd = -(a + fm) * (qab + fm) * x / ((a + m2) * (qap + m2));
        d = one + odd * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + odd / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let delta = d * c;
        f = f * delta;

        if (delta - one).abs() <= eps {
            let prefix = (ln_beta_prefix(x, a, b)).exp() / a;
            return Ok((prefix * f).max(T::zero()).min(one));
        }
    }
    Err(NumericsError::NoConvergence(max_iter))
}

/// Largest `n` for which [`binom_cdf`] sums the mass function directly.
pub const DIRECT_BINOM_LIMIT: u64 = 10_000;

/// Binomial CDF `P[K <= j]` for `K ~ Bin(n, q)`.
///
/// Up to [`DIRECT_BINOM_LIMIT`] trials the mass function is summed in the
/// log domain; beyond that the tail comes from `1 - I_q(j + 1, n - j)`.
pub fn binom_cdf<T: Scalar>(j: u64, n: u64, q: Probability<T>) -> Result<T, NumericsError> {
    if n == 0 {
        return Err(NumericsError::Domain("binomial needs n >= 1".into()));
    }
    if j > n {
        return Err(NumericsError::Domain(format!("binomial cdf at j={j} > n={n}")));
    }
    if j == n {
        return Ok(T::one());
    }
    let q = q.value();
    if q == T::zero() {
        return Ok(T::one());
    }
    if q == T::one() {
        return Ok(T::zero());
    }
    if n <= DIRECT_BINOM_LIMIT {
        Ok(binom_cdf_direct(j, n, q))
    } else {
        let tail = reg_inc_beta(q, from_u64::<T>(j + 1), from_u64::<T>(n - j))?;
        Ok(T::one() - tail)
    }
}

fn binom_cdf_direct<T: Scalar>(j: u64, n: u64, q: T) -> T {
    // Terms relative to the mode, built by ratios in both directions and
    // normalized by the total mass. Anchoring at n ln(1-q) instead loses
    // ~1e-9 to rounding at n = 10^4.
    let odds = q / (T::one() - q);
    let mode = (from_u64::<T>(n + 1) * q).floor().to_u64().unwrap_or(0).min(n);
    let (mut below, mut total) = (T::zero(), T::one());
    if mode <= j {
        below = T::one();
    }
    let mut t = T::one();
    for i in (1..=mode).rev() {
        t = t * from_u64::<T>(i) / (from_u64::<T>(n - i + 1) * odds);
        if t == T::zero() {
            break;
        }
        total = total + t;
        if i - 1 <= j {
            below = below + t;
        }
    }
    t = T::one();
    for i in mode..n {
        t = t * from_u64::<T>(n - i) * odds / from_u64::<T>(i + 1);
        if t == T::zero() {
            break;
        }
        total = total + t;
        if i < j {
            below = below + t;
        }
    }
    (below / total).min(T::one())
}

/// Binomial mass function `P[K = j]`, computed in the log domain.
pub fn binom_pmf<T: Scalar>(j: u64, n: u64, q: T) -> T {
    if j > n {
        return T::zero();
    }
    if q <= T::zero() {
        return if j == 0 { T::one() } else { T::zero() };
    }
    if q >= T::one() {
        return if j == n { T::one() } else { T::zero() };
    }
    let (nf, jf) = (from_u64::<T>(n), from_u64::<T>(j));
    let ln_choose = ln_gamma(nf + T::one()) - ln_gamma(jf + T::one()) - ln_gamma(nf - jf + T::one());
    (ln_choose + jf * q.ln() + (nf - jf) * (-q).ln_1p()).exp()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn entropy_symmetric_and_peaked(x in 0.0f64..=1.0) {
            let h = binary_entropy(Probability::new(x).unwrap());
            let g = binary_entropy(Probability::new(1.0 - x).unwrap());
            prop_assert!((h - g).abs() < 1e-12);
            prop_assert!(h <= 1.0);
        }

        #[test]
        fn binomial_beta_identity(n in 1u64..3000, frac in 0.0f64..1.0, q in 0.001f64..0.999) {
            let a = ((n as f64 * frac) as u64).min(n - 1);
            let lhs = 1.0 - binom_cdf(a, n, Probability::new(q).unwrap()).unwrap();
            let rhs = reg_inc_beta(q, (a + 1) as f64, (n - a) as f64).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "n={} a={} q={}: {} vs {}", n, a, q, lhs, rhs);
        }

        #[test]
        fn inc_beta_monotone_in_x(x in 0.0f64..1.0, dx in 0.0f64..0.1, a in 0.5f64..80.0, b in 0.5f64..80.0) {
            let y = (x + dx).min(1.0);
            let lo = reg_inc_beta(x, a, b).unwrap();
            let hi = reg_inc_beta(y, a, b).unwrap();
            prop_assert!(hi >= lo - 1e-14);
            prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}
