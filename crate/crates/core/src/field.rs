//! Exact arithmetic in the prime field Z_q.
//!
//! Supported moduli are primes in `[3, 2^62)`. Every product of two reduced
//! values is formed in `u128` before reduction, and centered lifts fit in
//! `i64` with room to spare.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest modulus (exclusive) accepted by [`Modulus::new`].
pub const MAX_MODULUS: u64 = 1 << 62;

/// A prime modulus `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

impl Modulus {
    pub fn new(q: u64) -> Result<Self> {
        if !(3..MAX_MODULUS).contains(&q) {
            return Err(Error::ModulusOutOfRange(q));
        }
        if !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(Modulus(q))
    }

    /// Smallest prime modulus `>= lower`.
    pub fn next_prime_at_least(lower: u64) -> Result<Self> {
        let mut c = lower.max(3);
        while c < MAX_MODULUS {
            if is_prime(c) {
                return Ok(Modulus(c));
            }
            c += 1;
        }
        Err(Error::ModulusOutOfRange(lower))
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Floor-mod of a signed integer: `a - floor(a / q) * q`.
    #[inline]
    pub fn reduce(self, a: i64) -> u64 {
        a.rem_euclid(self.0 as i64) as u64
    }

    #[inline]
    pub fn reduce_i128(self, a: i128) -> u64 {
        a.rem_euclid(self.0 as i128) as u64
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.0 {
            s - self.0
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.0 - b
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.0 as u128) as u64
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.0 - a
        }
    }

    pub fn inv(self, a: u64) -> Result<u64> {
        let a = a % self.0;
        if a == 0 {
            return Err(Error::ZeroInverse);
        }
        // extended Euclid on (a, q)
        let (mut r0, mut r1) = (self.0 as i128, a as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let quot = r0 / r1;
            (r0, r1) = (r1, r0 - quot * r1);
            (t0, t1) = (t1, t0 - quot * t1);
        }
        debug_assert_eq!(r0, 1);
        Ok(self.reduce_i128(t0))
    }

    /// Signed representative `a - floor((2a + q) / 2q) * q`, in
    /// `[-(q-1)/2, (q-1)/2]` for odd `q`.
    #[inline]
    pub fn lift(self, a: u64) -> i64 {
        let q = self.0 as u128;
        let k = (2 * a as u128 + q) / (2 * q);
        a as i64 - (k as i64) * self.0 as i64
    }
}

impl TryFrom<u64> for Modulus {
    type Error = Error;
    fn try_from(q: u64) -> Result<Self> {
        Modulus::new(q)
    }
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.0
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An element of Z_q tagged with its modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZqScalar {
    value: u64,
    modulus: Modulus,
}

impl ZqScalar {
    pub fn new(value: u64, modulus: Modulus) -> Self {
        ZqScalar {
            value: value % modulus.value(),
            modulus,
        }
    }

    pub fn zero(modulus: Modulus) -> Self {
        ZqScalar { value: 0, modulus }
    }

    pub fn one(modulus: Modulus) -> Self {
        ZqScalar { value: 1, modulus }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.value
    }

    #[inline]
    pub fn modulus(self) -> Modulus {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn inv(self) -> Result<Self> {
        mod_inv(self)
    }

    pub fn lift(self) -> i64 {
        centered_lift(self)
    }

    fn check(self, other: Self) {
        assert_eq!(
            self.modulus, other.modulus,
            "ZqScalar arithmetic across different moduli"
        );
    }
}

impl fmt::Display for ZqScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.modulus)
    }
}

impl Add for ZqScalar {
    type Output = ZqScalar;
    fn add(self, rhs: ZqScalar) -> ZqScalar {
        self.check(rhs);
        ZqScalar {
            value: self.modulus.add(self.value, rhs.value),
            modulus: self.modulus,
        }
    }
}

impl AddAssign for ZqScalar {
    fn add_assign(&mut self, rhs: ZqScalar) {
        *self = *self + rhs;
    }
}

impl Sub for ZqScalar {
    type Output = ZqScalar;
    fn sub(self, rhs: ZqScalar) -> ZqScalar {
        self.check(rhs);
        ZqScalar {
            value: self.modulus.sub(self.value, rhs.value),
            modulus: self.modulus,
        }
    }
}

impl Mul for ZqScalar {
    type Output = ZqScalar;
    fn mul(self, rhs: ZqScalar) -> ZqScalar {
        self.check(rhs);
        ZqScalar {
            value: self.modulus.mul(self.value, rhs.value),
            modulus: self.modulus,
        }
    }
}

impl Neg for ZqScalar {
    type Output = ZqScalar;
    fn neg(self) -> ZqScalar {
        ZqScalar {
            value: self.modulus.neg(self.value),
            modulus: self.modulus,
        }
    }
}

pub fn mod_reduce(a: i64, q: Modulus) -> ZqScalar {
    ZqScalar {
        value: q.reduce(a),
        modulus: q,
    }
}

pub fn mod_inv(a: ZqScalar) -> Result<ZqScalar> {
    Ok(ZqScalar {
        value: a.modulus.inv(a.value)?,
        modulus: a.modulus,
    })
}

pub fn centered_lift(a: ZqScalar) -> i64 {
    a.modulus.lift(a.value)
}

fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u128;
    let m128 = m as u128;
    let mut b = base as u128 % m128;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m128;
        }
        b = b * b % m128;
        exp >>= 1;
    }
    acc as u64
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &WITNESSES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q97() -> Modulus {
        Modulus::new(97).unwrap()
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(mod_reduce(-1, q97()).value(), 96);
        assert_eq!(mod_reduce(97, q97()).value(), 0);
        // repeated subtraction oracle
        let mut a: i64 = 1_000_000;
        while a >= 97 {
            a -= 97;
        }
        assert_eq!(mod_reduce(1_000_000, q97()).value(), a as u64);
        assert_eq!(a, 27);
    }

    #[test]
    fn inverse_examples() {
        let q7 = Modulus::new(7).unwrap();
        assert_eq!(mod_inv(ZqScalar::new(3, q7)).unwrap().value(), 5);
        for q in [7u64, 11, 97, (1u64 << 61) - 1] {
            let m = Modulus::new(q).unwrap();
            assert_eq!(mod_inv(ZqScalar::one(m)).unwrap().value(), 1);
        }
        assert_eq!(mod_inv(ZqScalar::zero(q97())), Err(Error::ZeroInverse));
    }

    #[test]
    fn inverse_exhaustive_97() {
        let m = q97();
        for a in 1..97 {
            let b = mod_inv(ZqScalar::new(a, m)).unwrap();
            assert_eq!((a * b.value()) % 97, 1, "a = {a}");
        }
    }

    #[test]
    fn lift_examples() {
        let m = q97();
        assert_eq!(centered_lift(ZqScalar::new(96, m)), -1);
        assert_eq!(centered_lift(ZqScalar::new(48, m)), 48);
        // floor((49 + 48.5) / 97) = floor(97.5 / 97) = 1
        assert_eq!(centered_lift(ZqScalar::new(49, m)), -48);
        assert_eq!(centered_lift(ZqScalar::new(0, m)), 0);
    }

    #[test]
    fn lift_matches_rational_floor() {
        // floor((a + q/2) / q) evaluated as floor((2a + q) / (2q)) by hand
        for q in [3u64, 11, 97] {
            let m = Modulus::new(q).unwrap();
            for a in 0..q {
                let k = if 2 * a + q >= 2 * q { 1 } else { 0 };
                assert_eq!(m.lift(a), a as i64 - k * q as i64);
                assert!(m.lift(a).unsigned_abs() <= (q - 1) / 2);
            }
        }
    }

    #[test]
    fn primality() {
        let small: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            small,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        assert!(is_prime((1 << 61) - 1));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2, 3, 5, 7
        assert_eq!(Modulus::new(91), Err(Error::NotPrime(91)));
        assert_eq!(Modulus::new(2), Err(Error::ModulusOutOfRange(2)));
        assert!(Modulus::new(1 << 62).is_err());
    }

    proptest! {
        #[test]
        fn lift_round_trips(a in 0u64..((1u64 << 61) - 1)) {
            let m = Modulus::new((1 << 61) - 1).unwrap();
            let s = ZqScalar::new(a, m);
            prop_assert_eq!(mod_reduce(centered_lift(s), m), s);
        }

        #[test]
        fn inverse_is_inverse(a in 1u64..97) {
            let s = ZqScalar::new(a, q97());
            prop_assert_eq!((s * mod_inv(s).unwrap()).value(), 1);
        }

        #[test]
        fn reduce_is_ring_homomorphism(x in -1_000_000_000i64..1_000_000_000, y in -1_000_000_000i64..1_000_000_000) {
            let m = Modulus::new(1_000_003).unwrap();
            prop_assert_eq!(mod_reduce(x + y, m), mod_reduce(x, m) + mod_reduce(y, m));
            prop_assert_eq!(mod_reduce(x * y, m), mod_reduce(x, m) * mod_reduce(y, m));
        }
    }
}
