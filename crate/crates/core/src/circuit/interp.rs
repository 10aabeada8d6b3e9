use std::collections::BTreeMap;
use std::sync::OnceLock;

use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_plan, FaultAction, FaultKind, FaultSite, Instr, Program};
use crate::modmath::{gcd, inv_mod, is_prime_u64, pow_mod, sub_mod, Nat};

/// Why a run stopped without releasing anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashReason {
    NotInvertible,
    ZeroModulus,
    Underflow,
    DivisionByZero,
    InexactDivision,
    NoRandomPrime,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecResult {
    Signature(Nat),
    /// The distinguished error output of test-based guards. It is not an
    /// element of `Z_N`.
    ErrorConstant,
    Crash(CrashReason),
}

impl ExecResult {
    pub fn signature(&self) -> Option<&Nat> {
        match self {
            ExecResult::Signature(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub result: ExecResult,
    /// `(instruction, stored value)` for every executed instruction that
    /// stores something (guards store their branch condition).
    pub trace: Vec<(usize, Nat)>,
    /// `(instruction, value)` for every random draw.
    pub rng: Vec<(usize, Nat)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("missing program input {0}")]
    MissingInput(String),
    #[error("invalid fault action {0}")]
    InvalidAction(String),
}

/// Execute `program` under `plan`. Deterministic in `(inputs, seed, plan)`.
pub fn execute(
    program: &Program,
    inputs: &BTreeMap<String, Nat>,
    seed: u64,
    plan: &[FaultAction],
) -> Result<ExecOutcome, ExecError> {
    check_plan(program, plan)?;
    run(program, inputs, seed, plan, true)
}

/// Like [`execute`] but without recording the trace; used by campaigns.
pub fn execute_untraced(
    program: &Program,
    inputs: &BTreeMap<String, Nat>,
    seed: u64,
    plan: &[FaultAction],
) -> Result<ExecResult, ExecError> {
    check_plan(program, plan)?;
    run(program, inputs, seed, plan, false).map(|o| o.result)
}

/// Register files of a fault-free run, one per instruction boundary.
#[derive(Debug, Clone, Default)]
pub struct Prefix {
    states: Vec<Vec<Nat>>,
}

/// Record the fault-free register state before every instruction.
pub fn nominal_prefix(program: &Program, inputs: &BTreeMap<String, Nat>, seed: u64) -> Result<Prefix, ExecError> {
    let mut prefix = Prefix::default();
    run_from(
        program,
        inputs,
        seed,
        &[],
        false,
        0,
        vec![Nat::zero(); program.regs.len()],
        Some(&mut prefix),
    )?;
    Ok(prefix)
}

/// Like [`execute_untraced`], starting from the nominal state just before the
/// first instruction the plan touches.
pub fn execute_resumed(
    program: &Program,
    inputs: &BTreeMap<String, Nat>,
    seed: u64,
    plan: &[FaultAction],
    prefix: &Prefix,
) -> Result<ExecResult, ExecError> {
    check_plan(program, plan)?;
    let start = plan
        .iter()
        .map(|a| match a.site {
            FaultSite::WriteOf(i) | FaultSite::ReadOf(i, _) | FaultSite::SkipRange(i, _) => i,
        })
        .min()
        .unwrap_or(0);
    match prefix.states.get(start) {
        Some(regs) => run_from(program, inputs, seed, plan, false, start, regs.clone(), None),
        None => run(program, inputs, seed, plan, false),
    }
    .map(|o| o.result)
}

const PRIME_TABLE_MAX_BITS: u32 = 24;

fn primes_with_bits(bits: u32) -> &'static [u64] {
    static TABLES: OnceLock<Vec<OnceLock<Vec<u64>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| (0..=PRIME_TABLE_MAX_BITS).map(|_| OnceLock::new()).collect());
    tables[bits as usize].get_or_init(|| {
        let lo = 1u64 << (bits - 1);
        let hi = 1u64 << bits;
        (lo..hi).filter(|&v| is_prime_u64(v)).collect()
    })
}

fn draw_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    // One independent stream per draw site, so skipping one draw never shifts
    // the others.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64);
    rng
}

fn prime_ok(r: u64, avoid: &[Nat], unit: &[Nat]) -> bool {
    let rn = Nat::from(r);
    avoid.iter().all(|x| x.is_zero() || !(x % &rn).is_zero())
        && unit.iter().all(|x| gcd(&Nat::from(r - 1), x) == Nat::from(1u32))
}

fn draw_prime(rng: &mut ChaCha8Rng, bits: u32, avoid: &[Nat], unit: &[Nat]) -> Option<u64> {
    if !(2..=63).contains(&bits) {
        return None;
    }
    if bits <= PRIME_TABLE_MAX_BITS {
        let candidates: Vec<u64> = primes_with_bits(bits)
            .iter()
            .copied()
            .filter(|&r| prime_ok(r, avoid, unit))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        return Some(candidates[rng.gen_range(0..candidates.len())]);
    }
    let lo = 1u64 << (bits - 1);
    let hi = 1u64 << bits;
    (0..100_000)
        .map(|_| rng.gen_range(lo..hi) | 1)
        .find(|&c| is_prime_u64(c) && prime_ok(c, avoid, unit))
}

fn nonzero(m: &Nat) -> Result<&Nat, CrashReason> {
    if m.is_zero() {
        Err(CrashReason::ZeroModulus)
    } else {
        Ok(m)
    }
}

fn apply_kind(kind: &FaultKind) -> Nat {
    match kind {
        FaultKind::Zero => Nat::zero(),
        FaultKind::Randomize(v) => v.clone(),
        FaultKind::Skip => unreachable!("skip is not a data fault"),
    }
}

fn run(
    program: &Program,
    inputs: &BTreeMap<String, Nat>,
    seed: u64,
    plan: &[FaultAction],
    record: bool,
) -> Result<ExecOutcome, ExecError> {
    // Registers start at zero: an unexecuted write leaves zero behind.
    let regs = vec![Nat::zero(); program.regs.len()];
    run_from(program, inputs, seed, plan, record, 0, regs, None)
}

#[allow(clippy::too_many_arguments)]
fn run_from(
    program: &Program,
    inputs: &BTreeMap<String, Nat>,
    seed: u64,
    plan: &[FaultAction],
    record: bool,
    start: usize,
    mut regs: Vec<Nat>,
    mut snapshots: Option<&mut Prefix>,
) -> Result<ExecOutcome, ExecError> {
    let mut trace = Vec::new();
    let mut rng_log = Vec::new();
    let skipped = |idx: usize| {
        plan.iter()
            .any(|a| matches!(a.site, FaultSite::SkipRange(f, l) if f <= idx && idx <= l))
    };
    let write_fault = |idx: usize| plan.iter().find(|a| a.site == FaultSite::WriteOf(idx)).map(|a| &a.kind);

    for (idx, slot) in program.slots.iter().enumerate().skip(start) {
        if let Some(p) = snapshots.as_deref_mut() {
            p.states.push(regs.clone());
        }
        if skipped(idx) {
            continue;
        }
        let instr = &slot.instr;
        let ops: Vec<Nat> = instr
            .operands()
            .iter()
            .enumerate()
            .map(
                |(k, r)| match plan.iter().find(|a| a.site == FaultSite::ReadOf(idx, k)) {
                    Some(a) => apply_kind(&a.kind),
                    None => regs[r.0].clone(),
                },
            )
            .collect();

        let computed: Result<Nat, CrashReason> = match instr {
            Instr::LoadInput { input, .. } => match inputs.get(input) {
                Some(v) => Ok(v.clone()),
                None => return Err(ExecError::MissingInput(input.clone())),
            },
            Instr::DrawRandomPrime { bits, avoid, .. } => {
                let (av, un) = ops.split_at(avoid.len());
                let mut rng = draw_rng(seed, idx);
                match draw_prime(&mut rng, *bits, av, un) {
                    Some(r) => {
                        let r = Nat::from(r);
                        rng_log.push((idx, r.clone()));
                        Ok(r)
                    }
                    None => Err(CrashReason::NoRandomPrime),
                }
            }
            Instr::DrawRandom { bits, .. } => {
                let mut rng = draw_rng(seed, idx);
                let hi = 1u128 << (*bits).min(127);
                let v = Nat::from(rng.gen_range(1u128..hi.max(2)));
                rng_log.push((idx, v.clone()));
                Ok(v)
            }
            Instr::Const { value, .. } => Ok(value.clone()),
            Instr::Bin { op, modulus, .. } => {
                let (a, b) = (&ops[0], &ops[1]);
                match modulus {
                    Some(_) => nonzero(&ops[2]).map(|m| match op {
                        super::BinOp::Add => (a + b) % m,
                        super::BinOp::Sub => sub_mod(a, b, m),
                        super::BinOp::Mul => a * b % m,
                    }),
                    None => match op {
                        super::BinOp::Add => Ok(a + b),
                        super::BinOp::Mul => Ok(a * b),
                        super::BinOp::Sub if a >= b => Ok(a - b),
                        super::BinOp::Sub => Err(CrashReason::Underflow),
                    },
                }
            }
            Instr::DivExact { .. } => {
                let (a, b) = (&ops[0], &ops[1]);
                if b.is_zero() {
                    Err(CrashReason::DivisionByZero)
                } else if !(a % b).is_zero() {
                    Err(CrashReason::InexactDivision)
                } else {
                    Ok(a / b)
                }
            }
            Instr::ModReduce { .. } => nonzero(&ops[1]).map(|m| &ops[0] % m),
            Instr::ModExp { .. } => nonzero(&ops[2]).map(|m| pow_mod(&ops[0], &ops[1], m)),
            Instr::ModInv { .. } => {
                nonzero(&ops[1]).and_then(|m| inv_mod(&ops[0], m).ok_or(CrashReason::NotInvertible))
            }
            Instr::CheckEq { modulus, .. } => {
                let differs = match modulus {
                    Some(_) => nonzero(&ops[2]).map(|m| &ops[0] % m != &ops[1] % m),
                    None => Ok(ops[0] != ops[1]),
                };
                differs.map(|d| Nat::from(d as u32))
            }
            Instr::Return { .. } => {
                return Ok(ExecOutcome {
                    result: ExecResult::Signature(ops[0].clone()),
                    trace,
                    rng: rng_log,
                });
            }
        };

        // A permanent fault replaces the stored value whatever the
        // computation did.
        let value = match write_fault(idx) {
            Some(kind) => apply_kind(kind),
            None => match computed {
                Ok(v) => v,
                Err(reason) => {
                    return Ok(ExecOutcome {
                        result: ExecResult::Crash(reason),
                        trace,
                        rng: rng_log,
                    })
                }
            },
        };
        if record {
            trace.push((idx, value.clone()));
        }
        match instr.dst() {
            Some(d) => regs[d.0] = value,
            None => {
                // Guard: nonzero condition means the invariant failed.
                if !value.is_zero() {
                    return Ok(ExecOutcome {
                        result: ExecResult::ErrorConstant,
                        trace,
                        rng: rng_log,
                    });
                }
            }
        }
    }
    // Return skipped: the output buffer still holds zero.
    Ok(ExecOutcome {
        result: ExecResult::Signature(Nat::zero()),
        trace,
        rng: rng_log,
    })
}

/// Smallest prime drawn during a run, if any.
pub(crate) fn smallest_draw(program: &Program, outcome: &ExecOutcome) -> Option<u64> {
    outcome
        .rng
        .iter()
        .filter(|(i, _)| matches!(program.instr(*i), Instr::DrawRandomPrime { .. }))
        .filter_map(|(_, v)| v.to_u64())
        .min()
}
