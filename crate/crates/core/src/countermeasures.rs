//! Program builders for the CRT-RSA countermeasure catalog.
//!
//! Every builder emits a straight-line [`Program`] over the inputs
//! `M p q dp dq iq` (or `M p q d iq` for the variants that exponentiate with
//! `d` directly). All precomputed values (`p'`, `N`, inverses, totients) are
//! computed by instructions so they can be faulted like anything else.

use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{validate, BinOp, ChecksumRing, InfectionShape, Instr, Phase, Program, Reg, Role, Slot, Style};
use crate::keytools::CrtKey;
use crate::modmath::{gcd, is_prime_u64, Nat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoId {
    Unprotected,
    GiraudSketch,
    Joye,
    CietJoye,
    Blomer,
    Shamir,
    Aumuller,
    Vigilant,
    Straightforward,
    FixedShamir,
    VigilantSimplifiedInfective,
    AumullerInfective,
}

impl AlgoId {
    pub const ALL: [AlgoId; 12] = [
        AlgoId::Unprotected,
        AlgoId::GiraudSketch,
        AlgoId::Joye,
        AlgoId::CietJoye,
        AlgoId::Blomer,
        AlgoId::Shamir,
        AlgoId::Aumuller,
        AlgoId::Vigilant,
        AlgoId::Straightforward,
        AlgoId::FixedShamir,
        AlgoId::VigilantSimplifiedInfective,
        AlgoId::AumullerInfective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoId::Unprotected => "unprotected",
            AlgoId::GiraudSketch => "giraud-sketch",
            AlgoId::Joye => "joye",
            AlgoId::CietJoye => "ciet-joye",
            AlgoId::Blomer => "blomer",
            AlgoId::Shamir => "shamir",
            AlgoId::Aumuller => "aumuller",
            AlgoId::Vigilant => "vigilant",
            AlgoId::Straightforward => "straightforward",
            AlgoId::FixedShamir => "fixed-shamir",
            AlgoId::VigilantSimplifiedInfective => "vigilant-simplified-infective",
            AlgoId::AumullerInfective => "aumuller-infective",
        }
    }

    /// Countermeasures without a known first-order attack.
    pub fn is_correct(self) -> bool {
        matches!(
            self,
            AlgoId::Straightforward
                | AlgoId::FixedShamir
                | AlgoId::Aumuller
                | AlgoId::AumullerInfective
                | AlgoId::Vigilant
                | AlgoId::VigilantSimplifiedInfective
        )
    }
}

impl fmt::Display for AlgoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown algorithm `{0}`")]
pub struct UnknownAlgo(pub String);

impl FromStr for AlgoId {
    type Err = UnknownAlgo;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgoId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAlgo(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    None,
    Shamir,
    Giraud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CatalogEntry {
    pub algo: AlgoId,
    pub family: Family,
    pub style: Style,
    /// Fault order the countermeasure is meant to resist.
    pub claimed_order: u32,
    /// Lowest order at which a BellCoRe attack is known, if any.
    pub broken_at: Option<u32>,
}

pub fn catalog() -> Vec<CatalogEntry> {
    use AlgoId::*;
    let e = |algo, family, style, claimed_order, broken_at| CatalogEntry {
        algo,
        family,
        style,
        claimed_order,
        broken_at,
    };
    vec![
        e(Unprotected, Family::None, Style::None, 0, Some(1)),
        e(GiraudSketch, Family::Giraud, Style::TestBased, 1, None),
        e(Joye, Family::Shamir, Style::TestBased, 1, Some(1)),
        e(CietJoye, Family::Shamir, Style::Infective, 2, Some(2)),
        e(Blomer, Family::Shamir, Style::Infective, 1, None),
        e(Shamir, Family::Shamir, Style::TestBased, 1, Some(1)),
        e(Aumuller, Family::Shamir, Style::TestBased, 1, None),
        e(Vigilant, Family::Shamir, Style::TestBased, 1, None),
        e(Straightforward, Family::Shamir, Style::TestBased, 1, None),
        e(FixedShamir, Family::Shamir, Style::TestBased, 1, None),
        e(VigilantSimplifiedInfective, Family::Shamir, Style::Infective, 1, None),
        e(AumullerInfective, Family::Shamir, Style::Infective, 1, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("no {bits}-bit prime satisfies the constraints of the random draws")]
    UnsatisfiableRandom { bits: u32 },
    #[error("key is missing or has an inconsistent field: {0}")]
    MissingKeyField(String),
}

/// Emits instructions with a current phase.
struct Builder {
    prog: Program,
    phase: Phase,
}

impl Builder {
    fn new(algo: AlgoId, inputs: &[&str]) -> Self {
        Self {
            prog: Program {
                name: algo.name().to_string(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                regs: Vec::new(),
                slots: Vec::new(),
                checksum: ChecksumRing::None,
                infection: InfectionShape::None,
            },
            phase: Phase::Setup,
        }
    }

    fn phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    fn push(&mut self, instr: Instr, role: Role) {
        self.prog.slots.push(Slot {
            instr,
            phase: self.phase,
            role,
        });
    }

    fn def(&mut self, name: &str) -> Reg {
        assert!(self.prog.reg(name).is_none(), "register {name} defined twice");
        self.prog.fresh_reg(name)
    }

    fn input(&mut self, name: &str) -> Reg {
        let dst = self.def(name);
        self.push(
            Instr::LoadInput {
                dst,
                input: name.to_string(),
            },
            Role::Plain,
        );
        dst
    }

    /// The public modulus, loaded rather than recomputed from the secret primes.
    fn public_modulus(&mut self) -> Reg {
        if !self.prog.inputs.iter().any(|i| i == "N") {
            self.prog.inputs.push("N".to_string());
        }
        let dst = self.def("N");
        self.push(
            Instr::LoadInput {
                dst,
                input: "N".to_string(),
            },
            Role::Support,
        );
        dst
    }

    fn prime(&mut self, name: &str, bits: u32, avoid: &[Reg], unit: &[Reg]) -> Reg {
        let dst = self.def(name);
        self.push(
            Instr::DrawRandomPrime {
                dst,
                bits,
                avoid: avoid.to_vec(),
                unit: unit.to_vec(),
            },
            Role::Plain,
        );
        dst
    }

    fn random(&mut self, name: &str, bits: u32) -> Reg {
        let dst = self.def(name);
        self.push(Instr::DrawRandom { dst, bits }, Role::Plain);
        dst
    }

    fn constant(&mut self, name: &str, value: Nat) -> Reg {
        let dst = self.def(name);
        self.push(Instr::Const { dst, value }, Role::Plain);
        dst
    }

    fn bin_role(&mut self, name: &str, op: BinOp, a: Reg, b: Reg, modulus: Option<Reg>, role: Role) -> Reg {
        let dst = self.def(name);
        self.push(Instr::Bin { dst, op, a, b, modulus }, role);
        dst
    }

    fn add(&mut self, name: &str, a: Reg, b: Reg, m: Option<Reg>) -> Reg {
        self.bin_role(name, BinOp::Add, a, b, m, Role::Plain)
    }

    fn sub(&mut self, name: &str, a: Reg, b: Reg, m: Option<Reg>) -> Reg {
        self.bin_role(name, BinOp::Sub, a, b, m, Role::Plain)
    }

    fn mul(&mut self, name: &str, a: Reg, b: Reg, m: Option<Reg>) -> Reg {
        self.bin_role(name, BinOp::Mul, a, b, m, Role::Plain)
    }

    fn div(&mut self, name: &str, a: Reg, b: Reg) -> Reg {
        let dst = self.def(name);
        self.push(Instr::DivExact { dst, a, b }, Role::Plain);
        dst
    }

    fn reduce(&mut self, name: &str, src: Reg, modulus: Reg) -> Reg {
        let dst = self.def(name);
        self.push(Instr::ModReduce { dst, src, modulus }, Role::Plain);
        dst
    }

    fn exp(&mut self, name: &str, base: Reg, exp: Reg, modulus: Reg) -> Reg {
        let dst = self.def(name);
        self.push(
            Instr::ModExp {
                dst,
                base,
                exp,
                modulus,
            },
            Role::Plain,
        );
        dst
    }

    fn inv(&mut self, name: &str, src: Reg, modulus: Reg) -> Reg {
        let dst = self.def(name);
        self.push(Instr::ModInv { dst, src, modulus }, Role::Plain);
        dst
    }

    fn check(&mut self, a: Reg, b: Reg, m: Option<Reg>) {
        self.push(Instr::CheckEq { a, b, modulus: m }, Role::Check);
    }

    /// `c = a - b + 1 mod m` as a diff/unit pair.
    fn factor(&mut self, name: &str, a: Reg, b: Reg, m: Reg, one: Reg) -> Reg {
        let t = self.bin_role(&format!("{name}.d"), BinOp::Sub, a, b, Some(m), Role::FactorDiff);
        self.bin_role(name, BinOp::Add, t, one, Some(m), Role::FactorUnit)
    }

    /// Garner recombination `sq + q * (iq * (sp - sq) mod m)`.
    fn garner(&mut self, name: &str, sp: Reg, sq: Reg, q: Reg, iq: Reg, m: Reg) -> Reg {
        let t1 = self.sub(&format!("{name}.t1"), sp, sq, Some(m));
        let t2 = self.mul(&format!("{name}.t2"), iq, t1, Some(m));
        let t3 = self.mul(&format!("{name}.t3"), q, t2, None);
        self.add(name, sq, t3, None)
    }

    /// `S^{c_1 ... c_k} mod N`, returned.
    fn infect(&mut self, s: Reg, factors: &[Reg], n: Reg) {
        self.phase(Phase::Infect);
        let mut acc = factors[0];
        for (i, &c) in factors.iter().enumerate().skip(1) {
            acc = self.bin_role(&format!("c*.{i}"), BinOp::Mul, acc, c, None, Role::InfectionProduct);
        }
        let out = self.def("out");
        self.push(
            Instr::ModExp {
                dst: out,
                base: s,
                exp: acc,
                modulus: n,
            },
            Role::InfectionApply,
        );
        self.prog.infection = InfectionShape::Canonical;
        self.ret(out);
    }

    fn ret(&mut self, src: Reg) {
        self.phase(Phase::Output);
        self.push(Instr::Return { src }, Role::Plain);
    }

    fn finish(self) -> Program {
        let defects = validate(&self.prog);
        assert!(defects.is_empty(), "builder emitted an invalid program: {defects:?}");
        self.prog
    }
}

/// Build the program for `algo`. `r_bits` is the width of the random primes.
pub fn build(algo: AlgoId, key: &CrtKey, r_bits: u32) -> Result<Program, BuildError> {
    key.validate().map_err(|e| BuildError::MissingKeyField(e.to_string()))?;
    if !(2..=63).contains(&r_bits) {
        return Err(BuildError::UnsatisfiableRandom { bits: r_bits });
    }
    check_draws(algo, key, r_bits)?;
    Ok(match algo {
        AlgoId::Unprotected => unprotected(),
        AlgoId::GiraudSketch => giraud_sketch(key),
        AlgoId::Joye => joye(r_bits),
        AlgoId::CietJoye => ciet_joye(r_bits),
        AlgoId::Blomer => blomer(r_bits),
        AlgoId::Shamir => shamir(r_bits),
        AlgoId::Aumuller => aumuller(r_bits),
        AlgoId::Vigilant => vigilant(r_bits),
        AlgoId::Straightforward => straightforward(),
        AlgoId::FixedShamir => fixed_shamir(r_bits),
        AlgoId::VigilantSimplifiedInfective => vigilant_simplified(r_bits),
        AlgoId::AumullerInfective => aumuller_infective(r_bits),
    })
}

/// Make sure the nominal random draws can succeed for this key.
fn check_draws(algo: AlgoId, key: &CrtKey, bits: u32) -> Result<(), BuildError> {
    let d = key
        .private_exponent()
        .map_err(|e| BuildError::MissingKeyField(format!("d: {e}")))?;
    let ok = |r: u64, unit: &[&Nat]| {
        let rn = Nat::from(r);
        !(&key.p % &rn).is_zero()
            && !(&key.q % &rn).is_zero()
            && unit.iter().all(|x| gcd(&Nat::from(r - 1), x).is_one())
    };
    // (unit constraints, how many distinct primes) per algorithm
    let (first, second): (Vec<&Nat>, Option<Vec<&Nat>>) = match algo {
        AlgoId::Unprotected | AlgoId::GiraudSketch | AlgoId::Straightforward => return Ok(()),
        AlgoId::Joye | AlgoId::CietJoye => (vec![], Some(vec![])),
        // d'p and d'q must stay invertible modulo phi(p') and phi(q').
        AlgoId::Blomer => (vec![&d], Some(vec![&d])),
        AlgoId::Aumuller
        | AlgoId::AumullerInfective
        | AlgoId::Shamir
        | AlgoId::FixedShamir
        | AlgoId::Vigilant
        | AlgoId::VigilantSimplifiedInfective => (vec![], None),
    };
    if bits > 24 {
        // Wide draws are never exhausted at these key sizes.
        return Ok(());
    }
    let candidates = |unit: &[&Nat]| -> Vec<u64> {
        ((1u64 << (bits - 1))..(1u64 << bits))
            .filter(|&c| is_prime_u64(c) && ok(c, unit))
            .collect()
    };
    let a = candidates(&first);
    // The second draw must succeed whatever the first one picked.
    let enough = match &second {
        None => !a.is_empty(),
        Some(unit) => {
            let b = candidates(unit);
            !a.is_empty() && a.iter().all(|&x| b.iter().any(|&y| x != y))
        }
    };
    if enough {
        Ok(())
    } else {
        Err(BuildError::UnsatisfiableRandom { bits })
    }
}

const CRT_INPUTS: [&str; 6] = ["M", "p", "q", "dp", "dq", "iq"];
const D_INPUTS: [&str; 5] = ["M", "p", "q", "d", "iq"];

fn load(b: &mut Builder, names: &[&str]) -> Vec<Reg> {
    names.iter().map(|n| b.input(n)).collect()
}

fn unprotected() -> Program {
    let mut b = Builder::new(AlgoId::Unprotected, &CRT_INPUTS);
    let [m, p, q, dp, dq, iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.phase(Phase::ExpP);
    let sp = b.exp("Sp", m, dp, p);
    b.phase(Phase::ExpQ);
    let sq = b.exp("Sq", m, dq, q);
    b.phase(Phase::Recombine);
    let s = b.garner("S", sp, sq, q, iq, p);
    b.ret(s);
    b.finish()
}

/// Unrolled Montgomery ladder for `M^(e-1)` and `M^e` modulo `m`. The
/// exponent bits are fixed at build time.
fn ladder(b: &mut Builder, tag: &str, m: Reg, modulus: Reg, one: Reg, e: &Nat) -> (Reg, Reg) {
    let mut r0 = one;
    let mut r1 = b.reduce(&format!("L{tag}.1"), m, modulus);
    let k = e - 1u32;
    for i in (0..k.bits()).rev() {
        let step = k.bits() - i;
        let prod = b.mul(&format!("L{tag}.x{step}"), r0, r1, Some(modulus));
        if k.bit(i) {
            let sq = b.mul(&format!("L{tag}.s{step}"), r1, r1, Some(modulus));
            r0 = prod;
            r1 = sq;
        } else {
            let sq = b.mul(&format!("L{tag}.s{step}"), r0, r0, Some(modulus));
            r0 = sq;
            r1 = prod;
        }
    }
    (r1, r0)
}

fn giraud_sketch(key: &CrtKey) -> Program {
    let inputs = ["M", "p", "q", "iq"];
    let mut b = Builder::new(AlgoId::GiraudSketch, &inputs);
    let [m, p, q, iq] = load(&mut b, &inputs)[..] else {
        unreachable!()
    };
    let one = b.constant("one", Nat::one());
    b.phase(Phase::ExpP);
    let (sp, sp1) = ladder(&mut b, "p", m, p, one, &key.dp);
    b.phase(Phase::ExpQ);
    let (sq, sq1) = ladder(&mut b, "q", m, q, one, &key.dq);
    b.phase(Phase::Recombine);
    let s = b.garner("S", sp, sq, q, iq, p);
    let s1 = b.garner("S'", sp1, sq1, q, iq, p);
    b.phase(Phase::Verify);
    let n = b.mul("N", p, q, None);
    let ms1 = b.mul("MS'", m, s1, Some(n));
    b.check(ms1, s, Some(n));
    b.ret(s);
    b.finish()
}

/// `(p - 1) * (r - 1)`.
fn totient(b: &mut Builder, name: &str, p: Reg, r: Reg, one: Reg) -> Reg {
    let pm1 = b.sub(&format!("{name}.a"), p, one, None);
    let rm1 = b.sub(&format!("{name}.b"), r, one, None);
    b.mul(name, pm1, rm1, None)
}

fn joye(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::Joye, &CRT_INPUTS);
    let [m, p, q, dp, dq, iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    let r1 = b.prime("r1", bits, &[p, q], &[]);
    let r2 = b.prime("r2", bits, &[p, q, r1], &[]);
    let pp = b.mul("p'", p, r1, None);
    let qq = b.mul("q'", q, r2, None);
    b.inv("i'q", qq, pp);
    b.mul("N", p, q, None);

    b.phase(Phase::ExpP);
    let spp = b.exp("S'p", m, dp, pp);
    let spr = b.exp("Spr", m, dp, r1);

    b.phase(Phase::ExpQ);
    let sqq = b.exp("S'q", m, dq, qq);
    let sqr = b.exp("Sqr", m, dq, r2);

    b.phase(Phase::Recombine);
    let sp = b.reduce("Sp", spp, p);
    let sq = b.reduce("Sq", sqq, q);

    b.phase(Phase::Verify);
    b.check(spp, spr, Some(r1));
    b.check(sqq, sqr, Some(r2));

    b.phase(Phase::Recombine);
    let s = b.garner("S", sp, sq, q, iq, p);
    b.ret(s);
    b.finish()
}

fn ciet_joye(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::CietJoye, &CRT_INPUTS);
    let [m, p, q, dp, dq, _iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    b.prog.infection = InfectionShape::Custom;
    let one = b.constant("one", Nat::one());
    let r1 = b.prime("r1", bits, &[p, q], &[]);
    let r2 = b.prime("r2", bits, &[p, q, r1], &[]);
    let r3 = b.random("r3", bits);
    let a = b.random("a", bits);
    b.random("gamma.0", bits);
    let pp = b.mul("p'", p, r1, None);
    let qq = b.mul("q'", q, r2, None);
    let iqq = b.inv("i'q", qq, pp);
    let n = b.mul("N", p, q, None);

    b.phase(Phase::ExpP);
    let xp = b.exp("S'p.e", m, dp, pp);
    let spp = b.add("S'p", a, xp, Some(pp));
    let xpr = b.exp("Spr.e", m, dp, r1);
    let spr = b.add("Spr", a, xpr, Some(r1));

    b.phase(Phase::ExpQ);
    let xq = b.exp("S'q.e", m, dq, qq);
    let sqq = b.add("S'q", a, xq, Some(qq));
    let xqr = b.exp("Sqr.e", m, dq, r2);
    let sqr = b.add("Sqr", a, xqr, Some(r2));

    b.phase(Phase::Recombine);
    let s1 = b.garner("S'", spp, sqq, qq, iqq, pp);

    b.phase(Phase::Verify);
    let c1 = b.factor("c1", s1, spr, r1, one);
    let c2 = b.factor("c2", s1, sqr, r2, one);

    b.phase(Phase::Infect);
    let pow2 = b.constant("2^l", Nat::one() << bits);
    let u = b.mul("gamma.u", r3, c1, None);
    let w0 = b.sub("gamma.v", pow2, r3, None);
    let w = b.mul("gamma.w", w0, c2, None);
    let x = b.add("gamma.x", u, w, None);
    let gamma = b.div("gamma", x, pow2);
    let ag = b.exp("a^gamma", a, gamma, n);
    let s = b.sub("S", s1, ag, Some(n));
    b.ret(s);
    b.finish()
}

fn blomer(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::Blomer, &D_INPUTS);
    let [m, p, q, d, _iq] = load(&mut b, &D_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    let one = b.constant("one", Nat::one());
    let r1 = b.prime("r1", bits, &[p, q], &[d]);
    let r2 = b.prime("r2", bits, &[p, q, r1], &[d]);
    let pp = b.mul("p'", p, r1, None);
    let qq = b.mul("q'", q, r2, None);
    let iqq = b.inv("i'q", qq, pp);
    let n = b.mul("N", p, q, None);
    let n1 = b.mul("N'.1", n, r1, None);
    b.mul("N'", n1, r2, None);
    let phi_p = totient(&mut b, "phi(p')", p, r1, one);
    let dpp = b.reduce("d'p", d, phi_p);
    let epp = b.inv("e'p", dpp, phi_p);
    let phi_q = totient(&mut b, "phi(q')", q, r2, one);
    let dqq = b.reduce("d'q", d, phi_q);
    let eqq = b.inv("e'q", dqq, phi_q);

    b.phase(Phase::ExpP);
    let spp = b.exp("S'p", m, dpp, pp);
    b.phase(Phase::ExpQ);
    let sqq = b.exp("S'q", m, dqq, qq);
    b.phase(Phase::Recombine);
    let s1 = b.garner("S'", spp, sqq, qq, iqq, pp);

    b.phase(Phase::Verify);
    let x1 = b.exp("S'^e'p", s1, epp, r1);
    let c1 = b.factor("c1", m, x1, r1, one);
    let x2 = b.exp("S'^e'q", s1, eqq, r2);
    let c2 = b.factor("c2", m, x2, r2, one);

    b.phase(Phase::Infect);
    let s = b.reduce("S", s1, n);
    b.infect(s, &[c1, c2], n);
    b.finish()
}

fn shamir(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::Shamir, &D_INPUTS);
    let [m, p, q, d, iq] = load(&mut b, &D_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    let r = b.prime("r", bits, &[p, q], &[]);

    b.phase(Phase::ExpP);
    let pp = b.mul("p'", p, r, None);
    let spp = b.exp("S'p", m, d, pp);

    b.phase(Phase::ExpQ);
    let qq = b.mul("q'", q, r, None);
    let sqq = b.exp("S'q", m, d, qq);

    b.phase(Phase::Recombine);
    let sp = b.reduce("Sp", spp, p);
    let sq = b.reduce("Sq", sqq, q);
    let s = b.garner("S", sp, sq, q, iq, p);

    b.phase(Phase::Verify);
    b.check(spp, sqq, Some(r));
    b.ret(s);
    b.finish()
}

/// The shared prefix of both Aumüller variants up to the intermediate
/// signatures.
struct AumullerCore {
    m: Reg,
    p: Reg,
    q: Reg,
    dp: Reg,
    dq: Reg,
    iq: Reg,
    r: Reg,
}

fn aumuller_setup(b: &mut Builder, bits: u32) -> AumullerCore {
    let [m, p, q, dp, dq, iq] = load(b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    let r = b.prime("r", bits, &[p, q], &[]);
    AumullerCore { m, p, q, dp, dq, iq, r }
}

fn aumuller(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::Aumuller, &CRT_INPUTS);
    let AumullerCore { m, p, q, dp, dq, iq, r } = aumuller_setup(&mut b, bits);
    let zero = b.constant("zero", Nat::zero());
    let pp = b.mul("p'", p, r, None);
    let qq = b.mul("q'", q, r, None);
    b.phase(Phase::Verify);
    b.check(pp, zero, Some(p));
    b.check(qq, zero, Some(q));

    b.phase(Phase::ExpP);
    let spp = b.exp("S'p", m, dp, pp);
    b.phase(Phase::ExpQ);
    let sqq = b.exp("S'q", m, dq, qq);

    b.phase(Phase::Recombine);
    let sp = b.reduce("Sp", spp, p);
    let sq = b.reduce("Sq", sqq, q);
    let s = b.garner("S", sp, sq, q, iq, p);
    b.phase(Phase::Verify);
    b.check(s, spp, Some(p));
    b.check(s, sqq, Some(q));

    let spr = b.reduce("Spr", spp, r);
    let sqr = b.reduce("Sqr", sqq, r);
    let x = b.exp("Spr^dq", spr, dq, r);
    let y = b.exp("Sqr^dp", sqr, dp, r);
    b.check(x, y, Some(r));
    b.ret(s);
    b.finish()
}

fn aumuller_infective(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::AumullerInfective, &CRT_INPUTS);
    let AumullerCore { m, p, q, dp, dq, iq, r } = aumuller_setup(&mut b, bits);
    let one = b.constant("one", Nat::one());
    let zero = b.constant("zero", Nat::zero());
    let pp = b.mul("p'", p, r, None);
    let c1 = b.factor("c1", pp, zero, p, one);
    let qq = b.mul("q'", q, r, None);
    let c2 = b.factor("c2", qq, zero, q, one);

    b.phase(Phase::ExpP);
    let spp = b.exp("S'p", m, dp, pp);
    b.phase(Phase::ExpQ);
    let sqq = b.exp("S'q", m, dq, qq);

    b.phase(Phase::Recombine);
    let sp = b.reduce("Sp", spp, p);
    let sq = b.reduce("Sq", sqq, q);
    let s = b.garner("S", sp, sq, q, iq, p);
    b.phase(Phase::Verify);
    let c3 = b.factor("c3", s, spp, p, one);
    let c4 = b.factor("c4", s, sqq, q, one);

    let spr = b.reduce("Spr", spp, r);
    let sqr = b.reduce("Sqr", sqq, r);
    let x = b.exp("Spr^dq", spr, dq, r);
    let y = b.exp("Sqr^dp", sqr, dp, r);
    let c5 = b.factor("c5", x, y, r, one);

    b.phase(Phase::Infect);
    let n = b.public_modulus();
    b.infect(s, &[c1, c2, c3, c4, c5], n);
    b.finish()
}

/// Registers of one half of the Vigilant CRT embedding.
struct Embedded {
    prime: Reg,
    modulus: Reg,
    b_coef: Reg,
    m_emb: Reg,
    s_emb: Reg,
    checksum: Reg,
}

/// `M'_x = A_x * (M mod x r^2) + B_x * (1 + r) mod x r^2` then
/// `S'_x = M'_x^dx mod x r^2` and the expected checksum
/// `1 + dx * r`.
#[allow(clippy::too_many_arguments)]
fn vigilant_half(
    b: &mut Builder,
    tag: &str,
    m: Reg,
    x: Reg,
    dx: Reg,
    r: Reg,
    r2: Reg,
    one: Reg,
    one_plus_r: Reg,
) -> Embedded {
    let xx = b.mul(&format!("{tag}'"), x, r2, None);
    let ixr = b.inv(&format!("i{tag}r"), x, r2);
    let mx = b.reduce(&format!("M{tag}"), m, xx);
    let bx = b.mul(&format!("B{tag}"), x, ixr, None);
    let ax = b.sub(&format!("A{tag}"), one, bx, Some(xx));
    let t1 = b.mul(&format!("M'{tag}.a"), ax, mx, Some(xx));
    let t2 = b.mul(&format!("M'{tag}.b"), bx, one_plus_r, Some(xx));
    let mxe = b.add(&format!("M'{tag}"), t1, t2, Some(xx));
    let sxe = b.exp(&format!("S'{tag}"), mxe, dx, xx);
    let dr = b.mul(&format!("S{tag}r.a"), dx, r, None);
    let chk = b.add(&format!("S{tag}r"), one, dr, None);
    Embedded {
        prime: x,
        modulus: xx,
        b_coef: bx,
        m_emb: mxe,
        s_emb: sxe,
        checksum: chk,
    }
}

fn vigilant(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::Vigilant, &CRT_INPUTS);
    let [m, p, q, dp, dq, iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::PrimeSquared;
    let one = b.constant("one", Nat::one());
    let zero = b.constant("zero", Nat::zero());
    let r = b.prime("r", bits, &[p, q], &[]);
    let big_r1 = b.random("R1", 2 * bits);
    let big_r2 = b.random("R2", 2 * bits);
    let n = b.mul("N", p, q, None);
    let r2 = b.mul("r^2", r, r, None);
    let one_plus_r = b.add("1+r", one, r, None);

    b.phase(Phase::ExpP);
    let hp = vigilant_half(&mut b, "p", m, p, dp, r, r2, one, one_plus_r);
    b.phase(Phase::Verify);
    b.check(hp.m_emb, m, Some(p));
    let lhs = b.mul("BpS'p", hp.b_coef, hp.s_emb, Some(hp.modulus));
    let rhs = b.mul("Bp(1+dpr)", hp.b_coef, hp.checksum, Some(hp.modulus));
    b.check(lhs, rhs, Some(hp.modulus));

    b.phase(Phase::ExpQ);
    let hq = vigilant_half(&mut b, "q", m, q, dq, r, r2, one, one_plus_r);
    b.phase(Phase::Verify);
    b.check(hq.m_emb, m, Some(q));
    let lhs = b.mul("BqS'q", hq.b_coef, hq.s_emb, Some(hq.modulus));
    let rhs = b.mul("Bq(1+dqr)", hq.b_coef, hq.checksum, Some(hq.modulus));
    b.check(lhs, rhs, Some(hq.modulus));

    b.phase(Phase::Recombine);
    let swap = |b: &mut Builder, tag: &str, h: &Embedded, big_r: Reg| {
        let t = b.sub(&format!("S{tag}r'.a"), h.checksum, big_r, Some(h.modulus));
        let u = b.mul(&format!("S{tag}r'.b"), h.b_coef, t, Some(h.modulus));
        b.sub(&format!("S{tag}r'"), h.s_emb, u, Some(h.modulus))
    };
    let spr = swap(&mut b, "p", &hp, big_r1);
    let sqr = swap(&mut b, "q", &hq, big_r2);
    let sr = b.garner("Sr", spr, sqr, hq.prime, iq, hp.modulus);

    b.phase(Phase::Verify);
    let nr = b.mul("Nr^2", n, r2, None);
    let dr = b.sub("R1-R2", big_r1, big_r2, Some(nr));
    let qi = b.mul("q.iq", hq.prime, iq, None);
    let k = b.mul("q.iq(R1-R2)", qi, dr, Some(nr));
    let v1 = b.sub("Sr-R2", sr, big_r2, Some(nr));
    let v2 = b.sub("Sr-R2-k", v1, k, Some(nr));
    let pq = b.mul("pq", p, q, None);
    let v3 = b.mul("pq(Sr-R2-k)", pq, v2, Some(nr));
    b.check(v3, zero, Some(nr));

    b.phase(Phase::Output);
    let s = b.reduce("S", sr, n);
    b.ret(s);
    b.finish()
}

fn vigilant_simplified(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::VigilantSimplifiedInfective, &CRT_INPUTS);
    let [m, p, q, dp, dq, iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::PrimeSquared;
    let one = b.constant("one", Nat::one());
    let r = b.prime("r", bits, &[p, q], &[]);
    let n = b.mul("N", p, q, None);
    let r2 = b.mul("r^2", r, r, None);
    let one_plus_r = b.add("1+r", one, r, None);

    b.phase(Phase::ExpP);
    let hp = vigilant_half(&mut b, "p", m, p, dp, r, r2, one, one_plus_r);
    b.phase(Phase::Verify);
    let mn = b.add("M'p+N", hp.m_emb, n, None);
    let cp = b.factor("cp", mn, m, p, one);

    b.phase(Phase::ExpQ);
    let hq = vigilant_half(&mut b, "q", m, q, dq, r, r2, one, one_plus_r);
    b.phase(Phase::Verify);
    let mn = b.add("M'q+N", hq.m_emb, n, None);
    let cq = b.factor("cq", mn, m, q, one);

    b.phase(Phase::Recombine);
    let s1 = b.garner("S'", hp.s_emb, hq.s_emb, q, iq, hp.modulus);
    let sr = b.garner("Sr", hp.checksum, hq.checksum, q, iq, hp.modulus);
    b.phase(Phase::Verify);
    let cs = b.factor("cS", s1, sr, r2, one);

    b.phase(Phase::Infect);
    let s = b.reduce("S", s1, n);
    b.infect(s, &[cp, cq, cs], n);
    b.finish()
}

fn straightforward() -> Program {
    let mut b = Builder::new(AlgoId::Straightforward, &CRT_INPUTS);
    let [m, p, q, dp, dq, iq] = load(&mut b, &CRT_INPUTS)[..] else {
        unreachable!()
    };

    b.phase(Phase::ExpP);
    let sp = b.exp("Sp", m, dp, p);
    b.phase(Phase::ExpQ);
    let sq = b.exp("Sq", m, dq, q);

    b.phase(Phase::Recombine);
    let s = b.garner("S", sp, sq, q, iq, p);

    // The second computations sit away from the first ones, so no short
    // skip window removes both copies of a half.
    b.phase(Phase::ExpP);
    let sp2 = b.exp("Sp.2", m, dp, p);
    b.phase(Phase::ExpQ);
    let sq2 = b.exp("Sq.2", m, dq, q);
    b.phase(Phase::Verify);
    b.check(sp, sp2, Some(p));
    b.check(sq, sq2, Some(q));
    b.check(s, sp, Some(p));
    b.check(s, sq, Some(q));
    b.ret(s);
    b.finish()
}

fn fixed_shamir(bits: u32) -> Program {
    let mut b = Builder::new(AlgoId::FixedShamir, &D_INPUTS);
    let [m, p, q, d, iq] = load(&mut b, &D_INPUTS)[..] else {
        unreachable!()
    };
    b.prog.checksum = ChecksumRing::Prime;
    let zero = b.constant("zero", Nat::zero());
    let r = b.prime("r", bits, &[p, q], &[]);
    let pp = b.mul("p'", p, r, None);
    let qq = b.mul("q'", q, r, None);
    b.phase(Phase::Verify);
    b.check(pp, zero, Some(p));
    b.check(qq, zero, Some(q));

    b.phase(Phase::ExpP);
    let spp = b.exp("S'p", m, d, pp);
    b.phase(Phase::ExpQ);
    let sqq = b.exp("S'q", m, d, qq);

    // The subring check follows the reductions, so no short skip window
    // removes an exponentiation together with its check.
    b.phase(Phase::Recombine);
    let sp = b.reduce("Sp", spp, p);
    let sq = b.reduce("Sq", sqq, q);
    b.phase(Phase::Verify);
    b.check(spp, sqq, Some(r));
    b.phase(Phase::Recombine);
    let s = b.garner("S", sp, sq, q, iq, p);
    b.phase(Phase::Verify);
    b.check(s, spp, Some(p));
    b.check(s, sqq, Some(q));
    b.ret(s);
    b.finish()
}
