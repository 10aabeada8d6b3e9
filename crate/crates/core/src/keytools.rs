//! Desk-scale RSA keys, their CRT form, and recovery of `d` and `e` from the
//! CRT 5-tuple `(p, q, d_p, d_q, i_q)`.

use std::collections::BTreeMap;
use std::str::FromStr;

use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modmath::{gcd, is_prime, is_prime_u64, mod_inv, MathError, Nat};

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("prime size must be between 4 and 64 bits, got {0}")]
    PrimeBits(u32),
    #[error("no prime found after {0} draws")]
    NoPrime(usize),
    #[error("invalid key: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("malformed key file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaKey {
    pub p: Nat,
    pub q: Nat,
    pub n: Nat,
    pub e: Nat,
    pub d: Nat,
    pub phi: Nat,
    pub lambda: Nat,
}

/// The CRT private key. `d`, `e` and `n` are optional: only the 5-tuple is
/// required, the rest can be recovered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrtKey {
    pub p: Nat,
    pub q: Nat,
    pub dp: Nat,
    pub dq: Nat,
    pub iq: Nat,
    pub d: Option<Nat>,
    pub e: Option<Nat>,
    pub n: Option<Nat>,
}

fn carmichael(p: &Nat, q: &Nat) -> Nat {
    let (pm1, qm1) = (p - 1u32, q - 1u32);
    &pm1 * &qm1 / gcd(&pm1, &qm1)
}

impl RsaKey {
    /// Build a key from two primes. `e` defaults to the smallest odd value
    /// `>= 3` coprime to `lambda`; `d` is `e^-1 mod phi`.
    pub fn from_primes(p: Nat, q: Nat, e: Option<Nat>) -> Result<Self, KeyError> {
        if p == q {
            return Err(KeyError::Invalid("p and q must differ".into()));
        }
        if !is_prime(&p) || !is_prime(&q) || p < Nat::from(3u32) || q < Nat::from(3u32) {
            return Err(KeyError::Invalid(format!("{p} and {q} must be odd primes")));
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        let lambda = carmichael(&p, &q);
        let e = match e {
            Some(e) => e,
            None => {
                let mut e = Nat::from(3u32);
                while !gcd(&e, &lambda).is_one() {
                    e += 2u32;
                }
                e
            }
        };
        let d = mod_inv(&e, &phi)?.into_value();
        Ok(Self {
            p,
            q,
            n,
            e,
            d,
            phi,
            lambda,
        })
    }
}

fn draw_prime(bits: u32, rng: &mut ChaCha8Rng) -> Result<u64, KeyError> {
    const BUDGET: usize = 100_000;
    let lo = 1u64 << (bits - 1);
    let hi = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    for _ in 0..BUDGET {
        let c = rng.gen_range(lo..=hi) | 1;
        if is_prime_u64(c) {
            return Ok(c);
        }
    }
    Err(KeyError::NoPrime(BUDGET))
}

/// Two distinct primes of exactly `bits` bits, redrawing `q` while it equals
/// `p`.
fn draw_distinct_primes(bits: u32, rng: &mut ChaCha8Rng) -> Result<(u64, u64), KeyError> {
    let p = draw_prime(bits, rng)?;
    for _ in 0..1000 {
        let q = draw_prime(bits, rng)?;
        if q != p {
            return Ok((p, q));
        }
    }
    Err(KeyError::NoPrime(1000))
}

pub fn gen_key(prime_bits: u32, seed: u64) -> Result<(RsaKey, CrtKey), KeyError> {
    if !(4..=64).contains(&prime_bits) {
        return Err(KeyError::PrimeBits(prime_bits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, q) = draw_distinct_primes(prime_bits, &mut rng)?;
    let key = RsaKey::from_primes(Nat::from(p), Nat::from(q), None)?;
    let crt = derive_crt(&key);
    Ok((key, crt))
}

pub fn derive_crt(key: &RsaKey) -> CrtKey {
    let dp = &key.d % (&key.p - 1u32);
    let dq = &key.d % (&key.q - 1u32);
    let iq = mod_inv(&key.q, &key.p)
        .expect("distinct primes are coprime")
        .into_value();
    CrtKey {
        p: key.p.clone(),
        q: key.q.clone(),
        dp,
        dq,
        iq,
        d: Some(key.d.clone()),
        e: Some(key.e.clone()),
        n: Some(key.n.clone()),
    }
}

/// Split `lambda(N) = p1 * q1 * r1` into two coprime factors `(p2, q2)` with
/// `p1 | p2` and `q1 | q2`.
pub fn coprime_split(p1: &Nat, q1: &Nat, r1: &Nat) -> Result<(Nat, Nat), KeyError> {
    if p1.is_zero() || q1.is_zero() || r1.is_zero() {
        return Err(KeyError::Domain("inputs must be positive".into()));
    }
    if !gcd(p1, q1).is_one() {
        return Err(KeyError::Domain(format!("{p1} and {q1} are not coprime")));
    }
    let (mut p2, mut q2, mut r2) = (p1.clone(), q1.clone(), r1.clone());
    let mut g = gcd(&p2, &r2);
    while !g.is_one() {
        p2 *= &g;
        r2 /= &g;
        g = gcd(&p2, &r2);
    }
    g = gcd(&q2, &r2);
    while !g.is_one() {
        q2 *= &g;
        r2 /= &g;
        g = gcd(&q2, &r2);
    }
    // p2, q2 and r2 are pairwise coprime here.
    q2 *= &r2;
    Ok((p2, q2))
}

impl CrtKey {
    pub fn modulus(&self) -> Nat {
        self.n.clone().unwrap_or_else(|| &self.p * &self.q)
    }

    pub fn lambda(&self) -> Nat {
        carmichael(&self.p, &self.q)
    }

    /// Private exponent: the stored one when present, otherwise recovered.
    pub fn private_exponent(&self) -> Result<Nat, KeyError> {
        match &self.d {
            Some(d) => Ok(d.clone()),
            None => recover_d(self),
        }
    }

    /// Check the CRT invariants.
    pub fn validate(&self) -> Result<(), KeyError> {
        if !is_prime(&self.p) || !is_prime(&self.q) || self.p == self.q {
            return Err(KeyError::Invalid("p and q must be distinct primes".into()));
        }
        if (&self.iq * &self.q % &self.p) != Nat::one() {
            return Err(KeyError::Invalid("iq * q != 1 mod p".into()));
        }
        if self.dp >= &self.p - 1u32 || self.dq >= &self.q - 1u32 {
            return Err(KeyError::Invalid("dp, dq must be reduced".into()));
        }
        if let Some(d) = &self.d {
            if d % (&self.p - 1u32) != self.dp || d % (&self.q - 1u32) != self.dq {
                return Err(KeyError::Invalid("d inconsistent with dp/dq".into()));
            }
        }
        if let Some(n) = &self.n {
            if *n != &self.p * &self.q {
                return Err(KeyError::Invalid("N != p*q".into()));
            }
        }
        Ok(())
    }

    /// Program inputs for signing `message` with this key.
    pub fn inputs(&self, message: &Nat) -> Result<BTreeMap<String, Nat>, KeyError> {
        let mut m = BTreeMap::new();
        m.insert("M".to_string(), message.clone());
        m.insert("p".to_string(), self.p.clone());
        m.insert("q".to_string(), self.q.clone());
        m.insert("dp".to_string(), self.dp.clone());
        m.insert("dq".to_string(), self.dq.clone());
        m.insert("iq".to_string(), self.iq.clone());
        m.insert("d".to_string(), self.private_exponent()?);
        m.insert("N".to_string(), self.modulus());
        Ok(m)
    }
}

/// Recover `d` in `[0, lambda(N))` from the CRT 5-tuple alone.
pub fn recover_d(key: &CrtKey) -> Result<Nat, KeyError> {
    let pm1 = &key.p - 1u32;
    let qm1 = &key.q - 1u32;
    let r1 = gcd(&pm1, &qm1);
    let (p1, q1) = (&pm1 / &r1, &qm1 / &r1);
    let (p2, q2) = coprime_split(&p1, &q1, &r1)?;
    let dp2 = &key.dp % &p2;
    let dq2 = &key.dq % &q2;
    if q2.is_one() {
        return Ok(dp2);
    }
    let i12 = mod_inv(&p2, &q2)?.into_value();
    let diff = if dq2 >= dp2 {
        (&dq2 - &dp2) % &q2
    } else {
        (&q2 - (&dp2 - &dq2) % &q2) % &q2
    };
    Ok(&dp2 + &p2 * (i12 * diff % &q2))
}

pub fn recover_e(key: &CrtKey) -> Result<Nat, KeyError> {
    let d = recover_d(key)?;
    Ok(mod_inv(&d, &key.lambda())?.into_value())
}

/// On-disk key: decimal strings, `d`, `e` and `N` optional.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct KeyFile {
    pub p: String,
    pub q: String,
    pub dp: String,
    pub dq: String,
    pub iq: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<String>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<String>,
}

fn parse_nat(field: &str, s: &str) -> Result<Nat, KeyError> {
    Nat::from_str(s.trim()).map_err(|_| KeyError::Format(format!("field {field}: {s:?}")))
}

impl From<&CrtKey> for KeyFile {
    fn from(k: &CrtKey) -> Self {
        Self {
            p: k.p.to_string(),
            q: k.q.to_string(),
            dp: k.dp.to_string(),
            dq: k.dq.to_string(),
            iq: k.iq.to_string(),
            e: k.e.as_ref().map(ToString::to_string),
            d: k.d.as_ref().map(ToString::to_string),
            n: k.n.as_ref().map(ToString::to_string),
        }
    }
}

impl TryFrom<&KeyFile> for CrtKey {
    type Error = KeyError;

    fn try_from(f: &KeyFile) -> Result<Self, KeyError> {
        let opt = |name: &str, v: &Option<String>| v.as_deref().map(|s| parse_nat(name, s)).transpose();
        let key = CrtKey {
            p: parse_nat("p", &f.p)?,
            q: parse_nat("q", &f.q)?,
            dp: parse_nat("dp", &f.dp)?,
            dq: parse_nat("dq", &f.dq)?,
            iq: parse_nat("iq", &f.iq)?,
            e: opt("e", &f.e)?,
            d: opt("d", &f.d)?,
            n: opt("N", &f.n)?,
        };
        key.validate()?;
        Ok(key)
    }
}

impl CrtKey {
    pub fn to_key_file(&self) -> String {
        let mut s = serde_json::to_string_pretty(&KeyFile::from(self)).expect("plain strings");
        s.push('\n');
        s
    }

    pub fn from_key_file(text: &str) -> Result<Self, KeyError> {
        let f: KeyFile = serde_json::from_str(text).map_err(|e| KeyError::Format(e.to_string()))?;
        CrtKey::try_from(&f)
    }

    /// The worked example used throughout: `p = 7`, `q = 11`, `e = 7`, `d = 43`.
    pub fn tiny() -> Self {
        let key = RsaKey::from_primes(Nat::from(7u32), Nat::from(11u32), Some(Nat::from(7u32))).expect("tiny key");
        derive_crt(&key)
    }

    /// The 5-tuple only: strips `d`, `e` and `N`.
    pub fn stripped(&self) -> Self {
        Self {
            d: None,
            e: None,
            n: None,
            ..self.clone()
        }
    }
}

/// Small helper for tests and examples.
pub fn nat_u64(n: &Nat) -> u64 {
    n.to_u64().expect("fits in u64")
}
