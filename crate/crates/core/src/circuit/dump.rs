//! Line-oriented program text:
//!
//! ```text
//! program unprotected
//! inputs M p q dp dq iq
//! checksum none
//! infection none
//! 6: Sp <- exp M dp mod p ; exp-p
//! 12: check S Sp mod p ; verify check
//! 13: return S ; output
//! ```
//!
//! Every instruction line is `idx: DST <- OP ARGS [mod REG] ; PHASE [ROLE]`.

use std::str::FromStr;

use thiserror::Error;

use super::{BinOp, ChecksumRing, InfectionShape, Instr, Phase, Program, Reg, Role, Slot};
use crate::modmath::Nat;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct DumpError {
    pub line: usize,
    pub msg: String,
}

fn checksum_name(c: ChecksumRing) -> &'static str {
    match c {
        ChecksumRing::None => "none",
        ChecksumRing::Prime => "prime",
        ChecksumRing::PrimeSquared => "prime-squared",
    }
}

fn infection_name(i: InfectionShape) -> &'static str {
    match i {
        InfectionShape::None => "none",
        InfectionShape::Canonical => "canonical",
        InfectionShape::Custom => "custom",
    }
}

fn body(p: &Program, instr: &Instr) -> String {
    let n = |r: &Reg| p.reg_name(*r).to_string();
    let with_mod = |s: String, m: &Option<Reg>| match m {
        Some(m) => format!("{s} mod {}", n(m)),
        None => s,
    };
    match instr {
        Instr::LoadInput { dst, input } => format!("{} <- input {input}", n(dst)),
        Instr::DrawRandomPrime { dst, bits, avoid, unit } => {
            let mut s = format!("{} <- randprime {bits}", n(dst));
            if !avoid.is_empty() {
                s.push_str(" avoid");
                avoid.iter().for_each(|r| s.push_str(&format!(" {}", n(r))));
            }
            if !unit.is_empty() {
                s.push_str(" unit");
                unit.iter().for_each(|r| s.push_str(&format!(" {}", n(r))));
            }
            s
        }
        Instr::DrawRandom { dst, bits } => format!("{} <- random {bits}", n(dst)),
        Instr::Const { dst, value } => format!("{} <- const {value}", n(dst)),
        Instr::Bin { dst, op, a, b, modulus } => {
            with_mod(format!("{} <- {} {} {}", n(dst), op.mnemonic(), n(a), n(b)), modulus)
        }
        Instr::DivExact { dst, a, b } => format!("{} <- divexact {} {}", n(dst), n(a), n(b)),
        Instr::ModReduce { dst, src, modulus } => {
            format!("{} <- reduce {} mod {}", n(dst), n(src), n(modulus))
        }
        Instr::ModExp {
            dst,
            base,
            exp,
            modulus,
        } => format!("{} <- exp {} {} mod {}", n(dst), n(base), n(exp), n(modulus)),
        Instr::ModInv { dst, src, modulus } => {
            format!("{} <- inv {} mod {}", n(dst), n(src), n(modulus))
        }
        Instr::CheckEq { a, b, modulus } => with_mod(format!("check {} {}", n(a), n(b)), modulus),
        Instr::Return { src } => format!("return {}", n(src)),
    }
}

pub(super) fn dump(p: &Program) -> String {
    let mut out = String::new();
    out.push_str(&format!("program {}\n", p.name));
    out.push_str(&format!("inputs {}\n", p.inputs.join(" ")));
    out.push_str(&format!("checksum {}\n", checksum_name(p.checksum)));
    out.push_str(&format!("infection {}\n", infection_name(p.infection)));
    for (idx, s) in p.slots.iter().enumerate() {
        out.push_str(&format!("{idx}: {} ; {}", body(p, &s.instr), s.phase.name()));
        if s.role != Role::Plain {
            out.push_str(&format!(" {}", s.role.name()));
        }
        out.push('\n');
    }
    out
}

struct Parser {
    regs: Vec<String>,
}

impl Parser {
    fn reg(&mut self, name: &str) -> Reg {
        match self.regs.iter().position(|r| r == name) {
            Some(i) => Reg(i),
            None => {
                self.regs.push(name.to_string());
                Reg(self.regs.len() - 1)
            }
        }
    }
}

const ROLES: [Role; 7] = [
    Role::Plain,
    Role::Check,
    Role::FactorDiff,
    Role::FactorUnit,
    Role::InfectionProduct,
    Role::InfectionApply,
    Role::Support,
];

/// Parse the text produced by [`Program::dump`].
pub fn parse_program(text: &str) -> Result<Program, DumpError> {
    let mut name = None;
    let mut inputs = Vec::new();
    let mut checksum = ChecksumRing::None;
    let mut infection = InfectionShape::None;
    let mut parser = Parser { regs: Vec::new() };
    let mut slots = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |msg: &str| DumpError {
            line,
            msg: msg.to_string(),
        };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut words = trimmed.split_whitespace();
        let head = words.next().unwrap_or_default();
        match head {
            "program" => name = words.next().map(str::to_string),
            "inputs" => inputs = words.map(str::to_string).collect(),
            "checksum" => {
                checksum = match words.next() {
                    Some("none") => ChecksumRing::None,
                    Some("prime") => ChecksumRing::Prime,
                    Some("prime-squared") => ChecksumRing::PrimeSquared,
                    _ => return Err(err("unknown checksum ring")),
                }
            }
            "infection" => {
                infection = match words.next() {
                    Some("none") => InfectionShape::None,
                    Some("canonical") => InfectionShape::Canonical,
                    Some("custom") => InfectionShape::Custom,
                    _ => return Err(err("unknown infection shape")),
                }
            }
            _ => {
                let (idx, rest) = trimmed.split_once(':').ok_or_else(|| err("expected `idx:`"))?;
                let idx: usize = idx.trim().parse().map_err(|_| err("bad index"))?;
                if idx != slots.len() {
                    return Err(err("instruction indices must be consecutive from 0"));
                }
                let (code, annot) = rest.split_once(';').ok_or_else(|| err("missing `; phase`"))?;
                let mut annot = annot.split_whitespace();
                let phase_name = annot.next().ok_or_else(|| err("missing phase"))?;
                let phase = Phase::ALL
                    .into_iter()
                    .find(|p| p.name() == phase_name)
                    .ok_or_else(|| err("unknown phase"))?;
                let role = match annot.next() {
                    None => Role::Plain,
                    Some(r) => ROLES
                        .into_iter()
                        .find(|x| x.name() == r)
                        .ok_or_else(|| err("unknown role"))?,
                };
                let instr = parse_instr(&mut parser, code.trim()).map_err(|m| err(&m))?;
                slots.push(Slot { instr, phase, role });
            }
        }
    }
    Ok(Program {
        name: name.ok_or(DumpError {
            line: 0,
            msg: "missing `program` header".into(),
        })?,
        inputs,
        regs: parser.regs,
        slots,
        checksum,
        infection,
    })
}

fn parse_instr(parser: &mut Parser, code: &str) -> Result<Instr, String> {
    let tokens: Vec<&str> = code.split_whitespace().collect();
    // Split off a trailing `mod REG`.
    let (tokens, modulus) = match tokens.as_slice() {
        [rest @ .., "mod", m] => (rest.to_vec(), Some(*m)),
        _ => (tokens.clone(), None),
    };
    let need_mod = || modulus.ok_or_else(|| "missing `mod REG`".to_string());
    match tokens.as_slice() {
        ["check", a, b] => Ok(Instr::CheckEq {
            a: parser.reg(a),
            b: parser.reg(b),
            modulus: modulus.map(|m| parser.reg(m)),
        }),
        ["return", s] if modulus.is_none() => Ok(Instr::Return { src: parser.reg(s) }),
        [dst, "<-", op, args @ ..] => {
            let dst = parser.reg(dst);
            match (*op, args) {
                ("input", [name]) => Ok(Instr::LoadInput {
                    dst,
                    input: name.to_string(),
                }),
                ("const", [v]) => Ok(Instr::Const {
                    dst,
                    value: Nat::from_str(v).map_err(|_| format!("bad constant {v}"))?,
                }),
                ("random", [bits]) => Ok(Instr::DrawRandom {
                    dst,
                    bits: bits.parse().map_err(|_| "bad bit width".to_string())?,
                }),
                ("randprime", [bits, rest @ ..]) => {
                    let bits = bits.parse().map_err(|_| "bad bit width".to_string())?;
                    let (mut avoid, mut unit) = (Vec::new(), Vec::new());
                    let mut into_unit = None;
                    for t in rest {
                        match *t {
                            "avoid" => into_unit = Some(false),
                            "unit" => into_unit = Some(true),
                            r => match into_unit {
                                Some(false) => avoid.push(parser.reg(r)),
                                Some(true) => unit.push(parser.reg(r)),
                                None => return Err("expected `avoid` or `unit`".into()),
                            },
                        }
                    }
                    Ok(Instr::DrawRandomPrime { dst, bits, avoid, unit })
                }
                ("add" | "sub" | "mul", [a, b]) => Ok(Instr::Bin {
                    dst,
                    op: match *op {
                        "add" => BinOp::Add,
                        "sub" => BinOp::Sub,
                        _ => BinOp::Mul,
                    },
                    a: parser.reg(a),
                    b: parser.reg(b),
                    modulus: modulus.map(|m| parser.reg(m)),
                }),
                ("divexact", [a, b]) => Ok(Instr::DivExact {
                    dst,
                    a: parser.reg(a),
                    b: parser.reg(b),
                }),
                ("reduce", [s]) => Ok(Instr::ModReduce {
                    dst,
                    src: parser.reg(s),
                    modulus: parser.reg(need_mod()?),
                }),
                ("inv", [s]) => Ok(Instr::ModInv {
                    dst,
                    src: parser.reg(s),
                    modulus: parser.reg(need_mod()?),
                }),
                ("exp", [b, e]) => Ok(Instr::ModExp {
                    dst,
                    base: parser.reg(b),
                    exp: parser.reg(e),
                    modulus: parser.reg(need_mod()?),
                }),
                _ => Err(format!("unrecognised instruction `{code}`")),
            }
        }
        _ => Err(format!("unrecognised instruction `{code}`")),
    }
}
