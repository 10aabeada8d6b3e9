//! Straight-line instruction IR for CRT-RSA countermeasures, its interpreter,
//! and the fault sites the interpreter can perturb.

mod dump;
mod interp;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::modmath::Nat;

pub use dump::{parse_program, DumpError};
pub(crate) use interp::smallest_draw;
pub use interp::{
    execute, execute_resumed, execute_untraced, nominal_prefix, CrashReason, ExecError, ExecOutcome, ExecResult, Prefix,
};

/// Index into [`Program::regs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    LoadInput {
        dst: Reg,
        input: String,
    },
    /// Uniform prime of exactly `bits` bits that divides none of the nonzero
    /// `avoid` values and whose predecessor is coprime to every `unit` value.
    DrawRandomPrime {
        dst: Reg,
        bits: u32,
        avoid: Vec<Reg>,
        unit: Vec<Reg>,
    },
    /// Uniform value in `[1, 2^bits)`.
    DrawRandom {
        dst: Reg,
        bits: u32,
    },
    Const {
        dst: Reg,
        value: Nat,
    },
    Bin {
        dst: Reg,
        op: BinOp,
        a: Reg,
        b: Reg,
        modulus: Option<Reg>,
    },
    /// Exact integer division; a remainder is a runtime anomaly.
    DivExact {
        dst: Reg,
        a: Reg,
        b: Reg,
    },
    ModReduce {
        dst: Reg,
        src: Reg,
        modulus: Reg,
    },
    ModExp {
        dst: Reg,
        base: Reg,
        exp: Reg,
        modulus: Reg,
    },
    ModInv {
        dst: Reg,
        src: Reg,
        modulus: Reg,
    },
    /// Test-based guard: `a != b (mod m)` ends the run with the error constant.
    CheckEq {
        a: Reg,
        b: Reg,
        modulus: Option<Reg>,
    },
    Return {
        src: Reg,
    },
}

impl Instr {
    pub fn dst(&self) -> Option<Reg> {
        match self {
            Instr::LoadInput { dst, .. }
            | Instr::DrawRandomPrime { dst, .. }
            | Instr::DrawRandom { dst, .. }
            | Instr::Const { dst, .. }
            | Instr::Bin { dst, .. }
            | Instr::DivExact { dst, .. }
            | Instr::ModReduce { dst, .. }
            | Instr::ModExp { dst, .. }
            | Instr::ModInv { dst, .. } => Some(*dst),
            Instr::CheckEq { .. } | Instr::Return { .. } => None,
        }
    }

    /// Registers read, in operand-slot order.
    pub fn operands(&self) -> Vec<Reg> {
        match self {
            Instr::LoadInput { .. } | Instr::DrawRandom { .. } | Instr::Const { .. } => vec![],
            Instr::DrawRandomPrime { avoid, unit, .. } => avoid.iter().chain(unit).copied().collect(),
            Instr::Bin { a, b, modulus, .. } => {
                let mut v = vec![*a, *b];
                v.extend(modulus);
                v
            }
            Instr::DivExact { a, b, .. } => vec![*a, *b],
            Instr::ModReduce { src, modulus, .. } | Instr::ModInv { src, modulus, .. } => {
                vec![*src, *modulus]
            }
            Instr::ModExp { base, exp, modulus, .. } => vec![*base, *exp, *modulus],
            Instr::CheckEq { a, b, modulus } => {
                let mut v = vec![*a, *b];
                v.extend(modulus);
                v
            }
            Instr::Return { src } => vec![*src],
        }
    }

    /// Whether a permanent fault can replace the value this instruction
    /// stores. Raw inputs are excluded; a guard's stored value is its branch
    /// condition.
    pub fn writable(&self) -> bool {
        !matches!(self, Instr::LoadInput { .. } | Instr::Return { .. })
    }

    pub fn map_regs(&self, f: &mut impl FnMut(Reg) -> Reg) -> Instr {
        let mut i = self.clone();
        match &mut i {
            Instr::LoadInput { dst, .. } | Instr::DrawRandom { dst, .. } | Instr::Const { dst, .. } => *dst = f(*dst),
            Instr::DrawRandomPrime { dst, avoid, unit, .. } => {
                *dst = f(*dst);
                avoid.iter_mut().chain(unit.iter_mut()).for_each(|r| *r = f(*r));
            }
            Instr::Bin { dst, a, b, modulus, .. } => {
                *dst = f(*dst);
                *a = f(*a);
                *b = f(*b);
                if let Some(m) = modulus {
                    *m = f(*m);
                }
            }
            Instr::DivExact { dst, a, b } => {
                *dst = f(*dst);
                *a = f(*a);
                *b = f(*b);
            }
            Instr::ModReduce { dst, src, modulus } | Instr::ModInv { dst, src, modulus } => {
                *dst = f(*dst);
                *src = f(*src);
                *modulus = f(*modulus);
            }
            Instr::ModExp {
                dst,
                base,
                exp,
                modulus,
            } => {
                *dst = f(*dst);
                *base = f(*base);
                *exp = f(*exp);
                *modulus = f(*modulus);
            }
            Instr::CheckEq { a, b, modulus } => {
                *a = f(*a);
                *b = f(*b);
                if let Some(m) = modulus {
                    *m = f(*m);
                }
            }
            Instr::Return { src } => *src = f(*src),
        }
        i
    }
}

/// Which part of the algorithm an instruction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Setup,
    ExpP,
    ExpQ,
    Recombine,
    Verify,
    Infect,
    Output,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Setup,
        Phase::ExpP,
        Phase::ExpQ,
        Phase::Recombine,
        Phase::Verify,
        Phase::Infect,
        Phase::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::ExpP => "exp-p",
            Phase::ExpQ => "exp-q",
            Phase::Recombine => "recombine",
            Phase::Verify => "verify",
            Phase::Infect => "infect",
            Phase::Output => "output",
        }
    }
}

/// Structural role used by the program transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Plain,
    /// A test-based invariant verification (`CheckEq`).
    Check,
    /// `t = (a - b) mod m` of an infective factor.
    FactorDiff,
    /// `c = (t + 1) mod m` of an infective factor.
    FactorUnit,
    /// Multiplication accumulating the infection exponent.
    InfectionProduct,
    /// `S^{c*} mod N`.
    InfectionApply,
    /// Inserted by a transform only to support the infection; removed again by
    /// the inverse transform.
    Support,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Plain => "plain",
            Role::Check => "check",
            Role::FactorDiff => "factor-diff",
            Role::FactorUnit => "factor-unit",
            Role::InfectionProduct => "infection-product",
            Role::InfectionApply => "infection-apply",
            Role::Support => "support",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub instr: Instr,
    pub phase: Phase,
    pub role: Role,
}

/// How the small checksum ring relates to the drawn prime `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChecksumRing {
    None,
    Prime,
    PrimeSquared,
}

/// How the infective factors reach the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfectionShape {
    None,
    /// `Return S^{c_1 ... c_k} mod N`.
    Canonical,
    /// Anything else (e.g. the gamma-based infection).
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub name: String,
    pub inputs: Vec<String>,
    pub regs: Vec<String>,
    pub slots: Vec<Slot>,
    pub checksum: ChecksumRing,
    pub infection: InfectionShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    None,
    TestBased,
    Infective,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::None => "none",
            Style::TestBased => "test-based",
            Style::Infective => "infective",
        }
    }
}

/// A verification as seen by the transforms: the guard itself, or the pair of
/// instructions computing an infective factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Check { instr: usize },
    Factor { diff: usize, unit: usize },
}

impl Verification {
    pub fn instrs(&self) -> Vec<usize> {
        match *self {
            Verification::Check { instr } => vec![instr],
            Verification::Factor { diff, unit } => vec![diff, unit],
        }
    }
}

impl Program {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn instr(&self, idx: usize) -> &Instr {
        &self.slots[idx].instr
    }

    pub fn reg_name(&self, r: Reg) -> &str {
        &self.regs[r.0]
    }

    pub fn reg(&self, name: &str) -> Option<Reg> {
        self.regs.iter().position(|n| n == name).map(Reg)
    }

    /// Index of the instruction writing `name`.
    pub fn writer_of(&self, name: &str) -> Option<usize> {
        let r = self.reg(name)?;
        self.slots.iter().position(|s| s.instr.dst() == Some(r))
    }

    pub fn style(&self) -> Style {
        if self.slots.iter().any(|s| s.role == Role::Check) {
            Style::TestBased
        } else if self.infection != InfectionShape::None {
            Style::Infective
        } else {
            Style::None
        }
    }

    pub fn check_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s.instr, Instr::CheckEq { .. }))
            .count()
    }

    /// Verifications in program order. Factor pairs are matched through the
    /// register the diff writes.
    pub fn verifications(&self) -> Vec<Verification> {
        let mut out = Vec::new();
        for (idx, s) in self.slots.iter().enumerate() {
            match s.role {
                Role::Check => out.push(Verification::Check { instr: idx }),
                Role::FactorDiff => {
                    let t = s.instr.dst();
                    let unit = self.slots.iter().enumerate().skip(idx + 1).find(|(_, u)| {
                        u.role == Role::FactorUnit && matches!(u.instr, Instr::Bin { a, .. } if Some(a) == t)
                    });
                    if let Some((unit, _)) = unit {
                        out.push(Verification::Factor { diff: idx, unit });
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Instruction indices that belong to a verification.
    pub fn verification_instrs(&self) -> HashSet<usize> {
        self.verifications().iter().flat_map(|v| v.instrs()).collect()
    }

    /// Renders the program with registers renamed by first definition, so two
    /// programs that differ only in register names compare equal.
    pub fn canonical_form(&self) -> Vec<String> {
        let mut names = vec![None; self.regs.len()];
        let mut next = 0usize;
        let mut rename = |r: Reg| {
            let n = names[r.0].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            Reg(*n)
        };
        self.slots
            .iter()
            .map(|s| {
                // Definitions first so dst numbering follows program order.
                if let Some(d) = s.instr.dst() {
                    rename(d);
                }
                let i = s.instr.map_regs(&mut rename);
                format!("{:?} {:?} {:?}", i, s.phase, s.role)
            })
            .collect()
    }

    pub fn fresh_reg(&mut self, base: &str) -> Reg {
        let mut name = base.to_string();
        let mut k = 1;
        while self.regs.contains(&name) {
            k += 1;
            name = format!("{base}.{k}");
        }
        self.regs.push(name);
        Reg(self.regs.len() - 1)
    }

    /// Drop register names that no instruction mentions.
    pub fn compact(&mut self) {
        let mut used = vec![false; self.regs.len()];
        for s in &self.slots {
            if let Some(d) = s.instr.dst() {
                used[d.0] = true;
            }
            for r in s.instr.operands() {
                used[r.0] = true;
            }
        }
        let mut map = vec![Reg(usize::MAX); self.regs.len()];
        let mut regs = Vec::new();
        for (i, name) in self.regs.iter().enumerate() {
            if used[i] {
                map[i] = Reg(regs.len());
                regs.push(name.clone());
            }
        }
        for s in &mut self.slots {
            s.instr = s.instr.map_regs(&mut |r| map[r.0]);
        }
        self.regs = regs;
    }

    /// Canonical text form (see [`parse_program`]).
    pub fn dump(&self) -> String {
        dump::dump(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Defect {
    DefBeforeUse { instr: usize, reg: String },
    MisplacedReturn { instr: usize },
    MissingReturn,
    DoubleWrite { instr: usize, reg: String },
    UnknownInput { instr: usize, input: String },
    BadRegister { instr: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Warning {
    DeadStore { instr: usize, reg: String },
}

/// Static well-formedness: def-before-use, write-once, one final `Return`.
pub fn validate(program: &Program) -> Vec<Defect> {
    let mut defects = Vec::new();
    let mut written = vec![false; program.regs.len()];
    let last = program.slots.len().checked_sub(1);
    let mut saw_return = false;
    for (idx, slot) in program.slots.iter().enumerate() {
        let instr = &slot.instr;
        let regs_ok = instr
            .operands()
            .iter()
            .chain(instr.dst().iter())
            .all(|r| r.0 < program.regs.len());
        if !regs_ok {
            defects.push(Defect::BadRegister { instr: idx });
            continue;
        }
        for r in instr.operands() {
            if !written[r.0] {
                defects.push(Defect::DefBeforeUse {
                    instr: idx,
                    reg: program.reg_name(r).to_string(),
                });
            }
        }
        if let Instr::LoadInput { input, .. } = instr {
            if !program.inputs.contains(input) {
                defects.push(Defect::UnknownInput {
                    instr: idx,
                    input: input.clone(),
                });
            }
        }
        if let Some(d) = instr.dst() {
            if written[d.0] {
                defects.push(Defect::DoubleWrite {
                    instr: idx,
                    reg: program.reg_name(d).to_string(),
                });
            }
            written[d.0] = true;
        }
        if matches!(instr, Instr::Return { .. }) {
            saw_return = true;
            if Some(idx) != last {
                defects.push(Defect::MisplacedReturn { instr: idx });
            }
        }
    }
    if !saw_return {
        defects.push(Defect::MissingReturn);
    }
    defects
}

/// Non-fatal findings: values stored but never read.
pub fn lint(program: &Program) -> Vec<Warning> {
    let mut read = vec![false; program.regs.len()];
    for s in &program.slots {
        for r in s.instr.operands() {
            read[r.0] = true;
        }
    }
    program
        .slots
        .iter()
        .enumerate()
        .filter_map(|(idx, s)| {
            let d = s.instr.dst()?;
            (!read[d.0]).then(|| Warning::DeadStore {
                instr: idx,
                reg: program.reg_name(d).to_string(),
            })
        })
        .collect()
}

/// Where a fault lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultSite {
    /// Permanent: the stored result of this instruction is replaced.
    WriteOf(usize),
    /// Transient: one operand fetch `(instr, slot)` sees the faulted value.
    ReadOf(usize, usize),
    /// Instructions `first..=last` are not executed.
    SkipRange(usize, usize),
}

impl FaultSite {
    pub fn is_skip(&self) -> bool {
        matches!(self, FaultSite::SkipRange(..))
    }

    /// Instructions the site touches.
    pub fn instrs(&self) -> std::ops::RangeInclusive<usize> {
        match *self {
            FaultSite::WriteOf(i) | FaultSite::ReadOf(i, _) => i..=i,
            FaultSite::SkipRange(a, b) => a..=b,
        }
    }
}

impl fmt::Display for FaultSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultSite::WriteOf(i) => write!(f, "write@{i}"),
            FaultSite::ReadOf(i, s) => write!(f, "read@{i}.{s}"),
            FaultSite::SkipRange(a, b) => write!(f, "skip@{a}-{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    Zero,
    Randomize(Nat),
    Skip,
}

impl FaultKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FaultKind::Zero => "zero",
            FaultKind::Randomize(_) => "randomize",
            FaultKind::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultAction {
    pub site: FaultSite,
    pub kind: FaultKind,
}

impl FaultAction {
    pub fn zero(site: FaultSite) -> Self {
        Self {
            site,
            kind: FaultKind::Zero,
        }
    }

    pub fn randomize(site: FaultSite, value: Nat) -> Self {
        Self {
            site,
            kind: FaultKind::Randomize(value),
        }
    }

    pub fn skip(first: usize, last: usize) -> Self {
        Self {
            site: FaultSite::SkipRange(first, last),
            kind: FaultKind::Skip,
        }
    }
}

impl fmt::Display for FaultAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FaultKind::Randomize(v) => write!(f, "{}:randomize={}", self.site, v),
            k => write!(f, "{}:{}", self.site, k.tag()),
        }
    }
}

/// A set of fault actions; its length is the attack order.
pub type FaultPlan = Vec<FaultAction>;

/// Every fault site of `program`: all writes, all operand reads, then skip
/// windows of length `1..=max_skip_len` by length and start. Input loads are
/// outside the attacked computation, so no window covers one (they are not
/// write sites either).
pub fn enumerate_sites(program: &Program, max_skip_len: usize) -> Vec<FaultSite> {
    let mut sites: Vec<FaultSite> = program
        .slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.instr.writable())
        .map(|(i, _)| FaultSite::WriteOf(i))
        .collect();
    for (i, s) in program.slots.iter().enumerate() {
        for slot in 0..s.instr.operands().len() {
            sites.push(FaultSite::ReadOf(i, slot));
        }
    }
    for len in 1..=max_skip_len {
        for start in 0..program.len() {
            let end = start + len - 1;
            if end >= program.len() {
                continue;
            }
            if !(start..=end).any(|i| matches!(program.instr(i), Instr::LoadInput { .. })) {
                sites.push(FaultSite::SkipRange(start, end));
            }
        }
    }
    sites
}

/// Check that every action targets an existing site with a compatible kind.
pub fn check_plan(program: &Program, plan: &[FaultAction]) -> Result<(), ExecError> {
    for a in plan {
        let ok = match a.site {
            FaultSite::WriteOf(i) => {
                i < program.len() && program.instr(i).writable() && !matches!(a.kind, FaultKind::Skip)
            }
            FaultSite::ReadOf(i, s) => {
                i < program.len() && s < program.instr(i).operands().len() && !matches!(a.kind, FaultKind::Skip)
            }
            FaultSite::SkipRange(f, l) => f <= l && l < program.len() && matches!(a.kind, FaultKind::Skip),
        };
        if !ok {
            return Err(ExecError::InvalidAction(a.to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
