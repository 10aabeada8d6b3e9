//! Program rewrites: test-based guards to infective factors and back, and
//! replication of every verification for higher-order resistance.

use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{BinOp, InfectionShape, Instr, Phase, Program, Reg, Role, Slot, Style, Verification};
use crate::modmath::Nat;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("program has no test-based guard")]
    NotTestBased,
    #[error("program has no infection")]
    NotInfective,
    #[error("infection is not of the form S^(c_1 ... c_k) mod N")]
    UnrecognizedInfectionShape,
    #[error("program has no verification to replicate")]
    NoVerifications,
    #[error("guard at instruction {0} has no modulus")]
    UnreducedCheck(usize),
    #[error("replication count must be at least 1")]
    ZeroReplication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TransformSpec {
    ToInfective,
    ToTestbased,
    Harden { n: usize },
}

pub fn apply(spec: TransformSpec, program: &Program) -> Result<Program, TransformError> {
    match spec {
        TransformSpec::ToInfective => to_infective(program),
        TransformSpec::ToTestbased => to_testbased(program),
        TransformSpec::Harden { n } => harden(program, n),
    }
}

fn slot(instr: Instr, phase: Phase, role: Role) -> Slot {
    Slot { instr, phase, role }
}

/// Replace every guard `a == b (mod m)` by the factor `c = a - b + 1 mod m`
/// and return `S^(c_1 ... c_k) mod N` instead of `S`.
pub fn to_infective(program: &Program) -> Result<Program, TransformError> {
    to_infective_mapped(program).map(|(p, _)| p)
}

/// Like [`to_infective`], also returning where each original instruction
/// landed. A guard maps to the first instruction of its factor.
pub fn to_infective_mapped(program: &Program) -> Result<(Program, Vec<usize>), TransformError> {
    if program.style() != Style::TestBased {
        return Err(TransformError::NotTestBased);
    }
    let first_check = program
        .slots
        .iter()
        .position(|s| s.role == Role::Check)
        .ok_or(TransformError::NotTestBased)?;
    let mut out = program.clone();
    out.slots.clear();

    // Reuse a constant 1 defined before the first guard when there is one.
    let existing_one = program.slots[..first_check].iter().find_map(|s| match &s.instr {
        Instr::Const { dst, value } if value.is_one() => Some(*dst),
        _ => None,
    });
    let one = existing_one.unwrap_or_else(|| out.fresh_reg("one"));

    let mut map = Vec::with_capacity(program.len());
    let mut factors = Vec::new();
    let mut result = None;
    for (idx, s) in program.slots.iter().enumerate() {
        if idx == first_check && existing_one.is_none() {
            out.slots.push(slot(
                Instr::Const {
                    dst: one,
                    value: Nat::one(),
                },
                s.phase,
                Role::Support,
            ));
        }
        map.push(out.slots.len());
        match (&s.instr, s.role) {
            (Instr::CheckEq { a, b, modulus }, Role::Check) => {
                let m = modulus.ok_or(TransformError::UnreducedCheck(idx))?;
                let k = factors.len() + 1;
                let t = out.fresh_reg(&format!("t{k}"));
                let c = out.fresh_reg(&format!("c{k}"));
                out.slots.push(slot(
                    Instr::Bin {
                        dst: t,
                        op: BinOp::Sub,
                        a: *a,
                        b: *b,
                        modulus: Some(m),
                    },
                    s.phase,
                    Role::FactorDiff,
                ));
                out.slots.push(slot(
                    Instr::Bin {
                        dst: c,
                        op: BinOp::Add,
                        a: t,
                        b: one,
                        modulus: Some(m),
                    },
                    s.phase,
                    Role::FactorUnit,
                ));
                factors.push(c);
            }
            (Instr::Return { src }, _) => result = Some(*src),
            _ => out.slots.push(s.clone()),
        }
    }
    let s = result.ok_or(TransformError::NotTestBased)?;

    let n = out.fresh_reg("N.inf");
    if !out.inputs.iter().any(|i| i == "N") {
        out.inputs.push("N".to_string());
    }
    out.slots.push(slot(
        Instr::LoadInput {
            dst: n,
            input: "N".to_string(),
        },
        Phase::Infect,
        Role::Support,
    ));
    let exp = product_chain(&mut out, &factors);
    let res = out.fresh_reg("S.inf");
    out.slots.push(slot(
        Instr::ModExp {
            dst: res,
            base: s,
            exp,
            modulus: n,
        },
        Phase::Infect,
        Role::InfectionApply,
    ));
    out.slots
        .push(slot(Instr::Return { src: res }, Phase::Output, Role::Plain));
    out.infection = InfectionShape::Canonical;
    Ok((out, map))
}

/// Append `c_1 * c_2 * ...` and return the register holding it.
fn product_chain(p: &mut Program, factors: &[Reg]) -> Reg {
    let mut acc = factors[0];
    for &c in &factors[1..] {
        let dst = p.fresh_reg("c*");
        p.slots.push(slot(
            Instr::Bin {
                dst,
                op: BinOp::Mul,
                a: acc,
                b: c,
                modulus: None,
            },
            Phase::Infect,
            Role::InfectionProduct,
        ));
        acc = dst;
    }
    acc
}

/// The canonical infection tail: the apply instruction and its base.
struct Infection {
    apply: usize,
    base: Reg,
}

fn recognize(program: &Program) -> Result<Infection, TransformError> {
    match program.infection {
        InfectionShape::None => return Err(TransformError::NotInfective),
        InfectionShape::Custom => return Err(TransformError::UnrecognizedInfectionShape),
        InfectionShape::Canonical => {}
    }
    let applies: Vec<usize> = (0..program.len())
        .filter(|&i| program.slots[i].role == Role::InfectionApply)
        .collect();
    let [apply] = applies[..] else {
        return Err(TransformError::UnrecognizedInfectionShape);
    };
    let Instr::ModExp { dst, base, exp, .. } = *program.instr(apply) else {
        return Err(TransformError::UnrecognizedInfectionShape);
    };
    let last = program.len() - 1;
    if apply + 1 != last || *program.instr(last) != (Instr::Return { src: dst }) {
        return Err(TransformError::UnrecognizedInfectionShape);
    }
    // Unfold the product chain down to the factor units.
    let units: Vec<Reg> = program
        .slots
        .iter()
        .filter(|s| s.role == Role::FactorUnit)
        .filter_map(|s| s.instr.dst())
        .collect();
    let mut factors = Vec::new();
    let mut stack = vec![exp];
    while let Some(r) = stack.pop() {
        if units.contains(&r) {
            factors.push(r);
            continue;
        }
        let w = program
            .slots
            .iter()
            .find(|s| s.instr.dst() == Some(r))
            .ok_or(TransformError::UnrecognizedInfectionShape)?;
        match (&w.instr, w.role) {
            (
                Instr::Bin {
                    op: BinOp::Mul,
                    a,
                    b,
                    modulus: None,
                    ..
                },
                Role::InfectionProduct,
            ) => {
                stack.push(*b);
                stack.push(*a);
            }
            _ => return Err(TransformError::UnrecognizedInfectionShape),
        }
    }
    // The exponent must be the product of exactly the factor units.
    factors.sort();
    let mut expected = units;
    expected.sort();
    if factors != expected {
        return Err(TransformError::UnrecognizedInfectionShape);
    }
    Ok(Infection { apply, base })
}

/// Replace every infective factor by the guard it encodes and return the
/// uninfected result.
pub fn to_testbased(program: &Program) -> Result<Program, TransformError> {
    let inf = recognize(program)?;
    let mut out = program.clone();
    out.slots.clear();
    let mut removed = Vec::new();
    let units: Vec<usize> = program
        .verifications()
        .iter()
        .filter_map(|v| match v {
            Verification::Factor { unit, .. } => Some(*unit),
            Verification::Check { .. } => None,
        })
        .collect();
    for (idx, s) in program.slots.iter().enumerate() {
        match s.role {
            Role::FactorDiff => {
                let Instr::Bin { a, b, modulus, .. } = s.instr else {
                    return Err(TransformError::UnrecognizedInfectionShape);
                };
                removed.extend(s.instr.dst());
                out.slots
                    .push(slot(Instr::CheckEq { a, b, modulus }, s.phase, Role::Check));
            }
            Role::FactorUnit if units.contains(&idx) => removed.extend(s.instr.dst()),
            Role::InfectionProduct | Role::InfectionApply | Role::Support => removed.extend(s.instr.dst()),
            _ if idx == program.len() - 1 => out.slots.push(slot(Instr::Return { src: inf.base }, s.phase, s.role)),
            _ => out.slots.push(s.clone()),
        }
    }
    let dangling = out
        .slots
        .iter()
        .any(|s| s.instr.operands().iter().any(|r| removed.contains(r)));
    if dangling {
        return Err(TransformError::UnrecognizedInfectionShape);
    }
    out.infection = InfectionShape::None;
    let loaded: Vec<String> = out
        .slots
        .iter()
        .filter_map(|s| match &s.instr {
            Instr::LoadInput { input, .. } => Some(input.clone()),
            _ => None,
        })
        .collect();
    out.inputs.retain(|i| loaded.contains(i));
    out.compact();
    Ok(out)
}

/// Replicate every verification `n` times. Each copy recomputes the
/// comparison from the original operand registers; infective copies also
/// join the exponent product.
pub fn harden(program: &Program, n: usize) -> Result<Program, TransformError> {
    if n == 0 {
        return Err(TransformError::ZeroReplication);
    }
    let verifications = program.verifications();
    if verifications.is_empty() {
        return Err(TransformError::NoVerifications);
    }
    if n == 1 {
        return Ok(program.clone());
    }
    let infection = match program.style() {
        Style::Infective => Some(recognize(program)?),
        _ => None,
    };
    let mut out = program.clone();
    out.slots.clear();
    let mut extra_factors = Vec::new();
    // Copies go right after the last instruction of each verification.
    let after: Vec<(usize, Verification)> = verifications
        .iter()
        .map(|v| (*v.instrs().iter().max().unwrap(), *v))
        .collect();
    for (idx, s) in program.slots.iter().enumerate() {
        if infection.as_ref().is_some_and(|inf| inf.apply == idx) {
            // Extend the exponent with every new factor, then apply.
            let Instr::ModExp {
                dst,
                base,
                exp,
                modulus,
            } = s.instr
            else {
                unreachable!("recognized apply")
            };
            let mut acc = exp;
            for &c in &extra_factors {
                let d = out.fresh_reg("c*");
                out.slots.push(slot(
                    Instr::Bin {
                        dst: d,
                        op: BinOp::Mul,
                        a: acc,
                        b: c,
                        modulus: None,
                    },
                    Phase::Infect,
                    Role::InfectionProduct,
                ));
                acc = d;
            }
            out.slots.push(slot(
                Instr::ModExp {
                    dst,
                    base,
                    exp: acc,
                    modulus,
                },
                s.phase,
                s.role,
            ));
            continue;
        }
        out.slots.push(s.clone());
        for (_, v) in after.iter().filter(|(last, _)| *last == idx) {
            for copy in 2..=n {
                match *v {
                    Verification::Check { instr } => out.slots.push(program.slots[instr].clone()),
                    Verification::Factor { diff, unit } => {
                        let d = &program.slots[diff];
                        let u = &program.slots[unit];
                        let (Some(td), Some(cd)) = (d.instr.dst(), u.instr.dst()) else {
                            unreachable!("factor instructions write registers")
                        };
                        let t = out.fresh_reg(&format!("{}#{copy}", program.reg_name(td)));
                        let c = out.fresh_reg(&format!("{}#{copy}", program.reg_name(cd)));
                        let rename = |r: Reg| {
                            if r == td {
                                t
                            } else if r == cd {
                                c
                            } else {
                                r
                            }
                        };
                        out.slots.push(Slot {
                            instr: d.instr.map_regs(&mut |r| rename(r)),
                            ..d.clone()
                        });
                        out.slots.push(Slot {
                            instr: u.instr.map_regs(&mut |r| rename(r)),
                            ..u.clone()
                        });
                        extra_factors.push(c);
                    }
                }
            }
        }
    }
    if infection.is_none() && !extra_factors.is_empty() {
        // Factors without a canonical infection cannot reach the output.
        return Err(TransformError::UnrecognizedInfectionShape);
    }
    Ok(out)
}
