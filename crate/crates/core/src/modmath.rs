//! Arbitrary-precision modular arithmetic used by every countermeasure, plus the
//! BellCoRe factor-extraction oracle.
//!
//! All values are non-negative. Differences of residues are normalised into
//! `[0, m)` eagerly, so no signed intermediate ever escapes this module.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Arbitrary-precision natural number.
pub type Nat = BigUint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MathError {
    #[error("modulus must be at least 2, got {0}")]
    Domain(Nat),
    #[error("{value} is not invertible modulo {modulus}")]
    NotInvertible { value: Nat, modulus: Nat },
}

/// An element of `Z_m`, always held in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Residue {
    value: Nat,
    modulus: Nat,
}

impl Residue {
    pub fn new(value: Nat, modulus: Nat) -> Result<Self, MathError> {
        if modulus < Nat::from(2u32) {
            return Err(MathError::Domain(modulus));
        }
        let value = value % &modulus;
        Ok(Self { value, modulus })
    }

    pub fn value(&self) -> &Nat {
        &self.value
    }

    pub fn modulus(&self) -> &Nat {
        &self.modulus
    }

    pub fn into_value(self) -> Nat {
        self.value
    }
}

fn check_modulus(modulus: &Nat) -> Result<(), MathError> {
    if *modulus < Nat::from(2u32) {
        Err(MathError::Domain(modulus.clone()))
    } else {
        Ok(())
    }
}

/// Left-to-right square-and-multiply. Accepts any modulus `>= 1`; callers
/// that need the public contract use [`mod_exp`].
pub(crate) fn pow_mod(base: &Nat, exponent: &Nat, modulus: &Nat) -> Nat {
    debug_assert!(!modulus.is_zero());
    if modulus.is_one() {
        return Nat::zero();
    }
    let base = base % modulus;
    let mut acc = Nat::one();
    for i in (0..exponent.bits()).rev() {
        acc = &acc * &acc % modulus;
        if exponent.bit(i) {
            acc = &acc * &base % modulus;
        }
    }
    acc
}

pub fn mod_exp(base: &Nat, exponent: &Nat, modulus: &Nat) -> Result<Residue, MathError> {
    check_modulus(modulus)?;
    Ok(Residue {
        value: pow_mod(base, exponent, modulus),
        modulus: modulus.clone(),
    })
}

pub fn gcd(a: &Nat, b: &Nat) -> Nat {
    let (mut a, mut b) = (a.clone(), b.clone());
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

/// Modular inverse for any modulus `>= 1` (everything is the inverse of
/// everything modulo 1, we answer 0).
pub(crate) fn inv_mod(a: &Nat, modulus: &Nat) -> Option<Nat> {
    debug_assert!(!modulus.is_zero());
    if modulus.is_one() {
        return Some(Nat::zero());
    }
    // Extended Euclid on signed integers.
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    let (mut old_r, mut r) = (BigInt::from_biguint(Sign::Plus, a % modulus), m.clone());
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    while !r.is_zero() {
        let q = &old_r / &r;
        let next_r = &old_r - &q * &r;
        old_r = std::mem::replace(&mut r, next_r);
        let next_s = &old_s - &q * &s;
        old_s = std::mem::replace(&mut s, next_s);
    }
    if !old_r.is_one() {
        return None;
    }
    let x = ((old_s % &m) + &m) % &m;
    x.to_biguint()
}

pub fn mod_inv(a: &Nat, modulus: &Nat) -> Result<Residue, MathError> {
    check_modulus(modulus)?;
    match inv_mod(a, modulus) {
        Some(value) => Ok(Residue {
            value,
            modulus: modulus.clone(),
        }),
        None => Err(MathError::NotInvertible {
            value: a.clone(),
            modulus: modulus.clone(),
        }),
    }
}

/// `(a - b) mod m` mapped into `[0, m)`.
pub(crate) fn sub_mod(a: &Nat, b: &Nat, modulus: &Nat) -> Nat {
    let a = a % modulus;
    let b = b % modulus;
    if a >= b {
        a - b
    } else {
        modulus - b + a
    }
}

/// Garner's CRT recombination `s_q + q * ((i_q * (s_p - s_q)) mod p)`.
pub fn garner_recombine(s_p: &Nat, s_q: &Nat, p: &Nat, q: &Nat, i_q: &Nat) -> Nat {
    let diff = sub_mod(s_p, s_q, p);
    let h = i_q * diff % p;
    s_q + q * h
}

/// `(1 + r)^d mod r^2`, computed through the binomial shortcut `1 + d*r`.
pub fn binomial_checksum(d: &Nat, r: &Nat) -> Residue {
    let r2 = r * r;
    let value = (Nat::one() + d * r) % &r2;
    Residue { value, modulus: r2 }
}

/// Outcome of the gcd oracle, following the four possible values of
/// `gcd(N, x)` for `N = p*q`, plus `NoOutput` for executions that released no
/// signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackClass {
    One,
    FactorP,
    FactorQ,
    WholeN,
    NoOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackResult {
    pub class: AttackClass,
    pub factor: Option<Nat>,
}

impl AttackResult {
    pub fn no_output() -> Self {
        Self {
            class: AttackClass::NoOutput,
            factor: None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.class, AttackClass::FactorP | AttackClass::FactorQ)
    }
}

/// BellCoRe: `gcd(N, |S - S_hat|)` classified against the known factors.
pub fn bellcore_extract(n: &Nat, s: &Nat, s_hat: &Nat, p: &Nat, q: &Nat) -> AttackResult {
    debug_assert_eq!(&(p * q), n);
    let diff = if s >= s_hat { s - s_hat } else { s_hat - s };
    let g = gcd(n, &diff);
    let class = if g == *n {
        AttackClass::WholeN
    } else if g == *p {
        AttackClass::FactorP
    } else if g == *q {
        AttackClass::FactorQ
    } else {
        debug_assert!(g.is_one(), "gcd {g} outside the four classes");
        AttackClass::One
    };
    let factor = match class {
        AttackClass::FactorP | AttackClass::FactorQ => Some(g),
        _ => None,
    };
    AttackResult { class, factor }
}

/// Deterministic Miller-Rabin, exact for every `n < 2^64`.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &w in &WITNESSES {
        if n == w {
            return true;
        }
        if n.is_multiple_of(w) {
            return false;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        b %= n;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primality for naturals that fit in 64 bits; larger values are reported
/// composite (nothing at desk scale produces them).
pub fn is_prime(n: &Nat) -> bool {
    n.to_u64().is_some_and(is_prime_u64)
}
