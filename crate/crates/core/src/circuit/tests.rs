use std::collections::BTreeMap;

use super::*;
use crate::keytools::CrtKey;
use crate::modmath::{bellcore_extract, garner_recombine, mod_exp, AttackClass};

const UNPROTECTED: &str = "\
program unprotected
inputs M p q dp dq iq
checksum none
infection none
0: M <- input M ; setup
1: p <- input p ; setup
2: q <- input q ; setup
3: dp <- input dp ; setup
4: dq <- input dq ; setup
5: iq <- input iq ; setup
6: Sp <- exp M dp mod p ; exp-p
7: Sq <- exp M dq mod q ; exp-q
8: t1 <- sub Sp Sq mod p ; recombine
9: t2 <- mul iq t1 mod p ; recombine
10: t3 <- mul q t2 ; recombine
11: S <- add Sq t3 ; recombine
12: return S ; output
";

fn tiny_inputs(m: u32) -> BTreeMap<String, Nat> {
    CrtKey::tiny().inputs(&Nat::from(m)).unwrap()
}

fn unprotected() -> Program {
    parse_program(UNPROTECTED).unwrap()
}

fn nat(v: u32) -> Nat {
    Nat::from(v)
}

#[test]
fn dump_round_trips() {
    let p = unprotected();
    assert_eq!(p.dump(), UNPROTECTED);
    assert_eq!(parse_program(&p.dump()).unwrap(), p);
}

#[test]
fn dump_round_trips_every_mnemonic() {
    let text = "\
program all
inputs M
checksum prime-squared
infection custom
0: M <- input M ; setup
1: r <- randprime 8 avoid M unit M ; setup
2: a <- random 8 ; setup
3: one <- const 1 ; setup support
4: x <- divexact M one ; infect
5: y <- reduce x mod r ; infect
6: z <- inv y mod r ; infect
7: w <- sub z one mod r ; verify factor-diff
8: c <- add w one mod r ; verify factor-unit
9: check y a ; verify check
10: return c ; output
";
    let p = parse_program(text).unwrap();
    assert_eq!(p.dump(), text);
    assert_eq!(p.checksum, ChecksumRing::PrimeSquared);
    assert_eq!(p.infection, InfectionShape::Custom);
}

#[test]
fn parse_rejects_garbage() {
    assert!(parse_program("program x\n0: S <- frobnicate a ; setup\n").is_err());
    assert!(parse_program("program x\n1: S <- input M ; setup\n").is_err());
    assert!(parse_program("program x\n0: S <- input M ; nowhere\n").is_err());
    assert!(parse_program("0: S <- input M ; setup\n").is_err());
}

#[test]
fn validate_accepts_unprotected() {
    assert!(validate(&unprotected()).is_empty());
}

#[test]
fn validate_reports_use_before_definition() {
    let p = parse_program(
        "program bad\ninputs p\n0: y <- add x p ; setup\n1: x <- input p ; setup\n2: return y ; output\n",
    )
    .unwrap();
    assert_eq!(
        validate(&p),
        vec![
            Defect::DefBeforeUse {
                instr: 0,
                reg: "x".into()
            },
            Defect::DefBeforeUse {
                instr: 0,
                reg: "p".into()
            },
        ]
    );
}

#[test]
fn validate_reports_misplaced_return_and_double_write() {
    let p = parse_program(
        "program bad\ninputs M\n0: x <- input M ; setup\n1: return x ; output\n2: x <- input M ; setup\n",
    )
    .unwrap();
    let defects = validate(&p);
    assert!(defects.contains(&Defect::MisplacedReturn { instr: 1 }));
    assert!(defects.contains(&Defect::DoubleWrite {
        instr: 2,
        reg: "x".into()
    }));
    let empty = parse_program("program e\n").unwrap();
    assert_eq!(validate(&empty), vec![Defect::MissingReturn]);
}

#[test]
fn lint_reports_dead_store() {
    let p =
        parse_program("program d\ninputs M\n0: x <- input M ; setup\n1: y <- add x x ; setup\n2: return x ; output\n")
            .unwrap();
    assert_eq!(
        lint(&p),
        vec![Warning::DeadStore {
            instr: 1,
            reg: "y".into()
        }]
    );
}

#[test]
fn skip_windows_leave_input_loads_alone() {
    let p =
        parse_program("program s\ninputs M\n0: x <- input M ; setup\n1: y <- add x x ; setup\n2: return y ; output\n")
            .unwrap();
    let sites = enumerate_sites(&p, 2);
    let skips: Vec<_> = sites.iter().filter(|s| s.is_skip()).copied().collect();
    assert_eq!(
        skips,
        vec![
            FaultSite::SkipRange(1, 1),
            FaultSite::SkipRange(2, 2),
            FaultSite::SkipRange(1, 2),
        ]
    );
    // one writable instruction, three operand reads
    assert_eq!(sites.len(), 1 + 3 + 3);
}

#[test]
fn unprotected_signs_correctly() {
    let key = CrtKey::tiny();
    let n = key.modulus();
    let d = key.private_exponent().unwrap();
    let p = unprotected();
    for m in 0..77u32 {
        let out = execute(&p, &tiny_inputs(m), 0, &[]).unwrap();
        let want = mod_exp(&nat(m), &d, &n).unwrap().into_value();
        assert_eq!(out.result, ExecResult::Signature(want), "m={m}");
    }
    let out = execute(&p, &tiny_inputs(2), 0, &[]).unwrap();
    assert_eq!(out.result, ExecResult::Signature(nat(30)));
}

#[test]
fn zeroing_the_q_half_leaks_p() {
    let p = unprotected();
    let sq = p.writer_of("Sq").unwrap();
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::WriteOf(sq))]).unwrap();
    assert_eq!(out.result, ExecResult::Signature(nat(44)));
    assert_eq!(garner_recombine(&nat(2), &nat(0), &nat(7), &nat(11), &nat(2)), nat(44));
    let r = bellcore_extract(&nat(77), &nat(30), &nat(44), &nat(7), &nat(11));
    assert_eq!(r.class, AttackClass::FactorP);
    assert_eq!(r.factor, Some(nat(7)));
}

#[test]
fn skipped_write_leaves_zero() {
    let p = unprotected();
    let sq = p.writer_of("Sq").unwrap();
    let zeroed = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::WriteOf(sq))]).unwrap();
    let skipped = execute(&p, &tiny_inputs(2), 0, &[FaultAction::skip(sq, sq)]).unwrap();
    assert_eq!(zeroed.result, skipped.result);
}

#[test]
fn skipped_return_releases_zero() {
    let p = unprotected();
    let last = p.len() - 1;
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::skip(last, last)]).unwrap();
    assert_eq!(out.result, ExecResult::Signature(nat(0)));
}

const CHECKED: &str = "\
program checked
inputs M p q dp dq iq
0: M <- input M ; setup
1: p <- input p ; setup
2: q <- input q ; setup
3: dp <- input dp ; setup
4: dq <- input dq ; setup
5: iq <- input iq ; setup
6: Sp <- exp M dp mod p ; exp-p
7: Sq <- exp M dq mod q ; exp-q
8: t1 <- sub Sp Sq mod p ; recombine
9: t2 <- mul iq t1 mod p ; recombine
10: t3 <- mul q t2 ; recombine
11: S <- add Sq t3 ; recombine
12: check S Sq mod q ; verify check
13: return S ; output
";

#[test]
fn failed_check_releases_error_constant() {
    let p = parse_program(CHECKED).unwrap();
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::WriteOf(7))]).unwrap();
    // Sq = 0 is consistent with S = 44 mod 11, so the check passes.
    assert_eq!(out.result, ExecResult::Signature(nat(44)));
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::ReadOf(11, 0))]).unwrap();
    assert_eq!(out.result, ExecResult::ErrorConstant);
}

#[test]
fn skipping_or_zeroing_a_check_makes_it_pass() {
    let p = parse_program(CHECKED).unwrap();
    let bad = FaultAction::zero(FaultSite::ReadOf(11, 0));
    for extra in [FaultAction::skip(12, 12), FaultAction::zero(FaultSite::WriteOf(12))] {
        let out = execute(&p, &tiny_inputs(2), 0, &[bad.clone(), extra]).unwrap();
        assert!(out.result.signature().is_some());
        assert_ne!(out.result, ExecResult::Signature(nat(30)));
    }
    let forced = FaultAction::randomize(FaultSite::WriteOf(12), nat(1));
    let out = execute(&p, &tiny_inputs(2), 0, &[forced]).unwrap();
    assert_eq!(out.result, ExecResult::ErrorConstant);
}

#[test]
fn read_fault_is_local_to_one_fetch() {
    let p = unprotected();
    // Sq is read by t1 (slot 1) and by S (slot 0); only the first fetch changes.
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::ReadOf(8, 1))]).unwrap();
    let nominal = execute(&p, &tiny_inputs(2), 0, &[]).unwrap();
    let sq = p.writer_of("Sq").unwrap();
    let stored = |o: &ExecOutcome| o.trace.iter().find(|(i, _)| *i == sq).unwrap().1.clone();
    assert_eq!(stored(&out), stored(&nominal));
    assert_ne!(out.result, nominal.result);
}

#[test]
fn runtime_anomalies_crash() {
    let p = unprotected();
    let out = execute(&p, &tiny_inputs(2), 0, &[FaultAction::zero(FaultSite::ReadOf(6, 2))]).unwrap();
    assert_eq!(out.result, ExecResult::Crash(CrashReason::ZeroModulus));
    let div = parse_program(
        "program d\ninputs M\n0: M <- input M ; setup\n1: z <- const 0 ; setup\n2: x <- divexact M z ; setup\n3: return x ; output\n",
    )
    .unwrap();
    let out = execute(&div, &tiny_inputs(2), 0, &[]).unwrap();
    assert_eq!(out.result, ExecResult::Crash(CrashReason::DivisionByZero));
    let under = parse_program(
        "program u\ninputs M p\n0: M <- input M ; setup\n1: p <- input p ; setup\n2: x <- sub M p ; setup\n3: return x ; output\n",
    )
    .unwrap();
    let out = execute(&under, &tiny_inputs(2), 0, &[]).unwrap();
    assert_eq!(out.result, ExecResult::Crash(CrashReason::Underflow));
}

#[test]
fn write_fault_overrides_a_crash() {
    let p = parse_program(
        "program w\ninputs M\n0: M <- input M ; setup\n1: z <- const 0 ; setup\n2: x <- inv z mod M ; setup\n3: return x ; output\n",
    )
    .unwrap();
    let out = execute(&p, &tiny_inputs(5), 0, &[]).unwrap();
    assert_eq!(out.result, ExecResult::Crash(CrashReason::NotInvertible));
    let out = execute(
        &p,
        &tiny_inputs(5),
        0,
        &[FaultAction::randomize(FaultSite::WriteOf(2), nat(3))],
    )
    .unwrap();
    assert_eq!(out.result, ExecResult::Signature(nat(3)));
}

#[test]
fn invalid_actions_are_rejected() {
    let p = unprotected();
    let bad = [
        FaultAction::zero(FaultSite::WriteOf(0)),
        FaultAction::zero(FaultSite::WriteOf(12)),
        FaultAction::zero(FaultSite::ReadOf(6, 3)),
        FaultAction::skip(3, 13),
        FaultAction::skip(4, 3),
        FaultAction {
            site: FaultSite::WriteOf(6),
            kind: FaultKind::Skip,
        },
    ];
    for a in bad {
        assert!(matches!(
            execute(&p, &tiny_inputs(2), 0, &[a]),
            Err(ExecError::InvalidAction(_))
        ));
    }
    let mut inputs = tiny_inputs(2);
    inputs.remove("iq");
    assert_eq!(
        execute(&p, &inputs, 0, &[]).unwrap_err(),
        ExecError::MissingInput("iq".into())
    );
}

const RANDOMIZED: &str = "\
program rnd
inputs p q
0: p <- input p ; setup
1: q <- input q ; setup
2: r1 <- randprime 8 avoid p q ; setup
3: r2 <- randprime 8 avoid p q r1 ; setup
4: a <- random 16 ; setup
5: x <- mul r1 r2 ; setup
6: y <- add x a ; setup
7: return y ; output
";

#[test]
fn draws_are_deterministic_per_seed() {
    let p = parse_program(RANDOMIZED).unwrap();
    let inputs = tiny_inputs(2);
    let a = execute(&p, &inputs, 9, &[]).unwrap();
    let b = execute(&p, &inputs, 9, &[]).unwrap();
    assert_eq!(a, b);
    let outs: std::collections::HashSet<_> = (0..8).map(|s| execute(&p, &inputs, s, &[]).unwrap().result).collect();
    assert!(outs.len() > 1);
    for (_, r) in a.rng.iter().take(2) {
        assert!(crate::modmath::is_prime(r));
        assert!(*r >= nat(128) && *r < nat(256));
    }
    assert_ne!(a.rng[0].1, a.rng[1].1);
    assert_eq!(
        smallest_draw(&p, &a),
        a.rng[..2].iter().map(|(_, v)| crate::keytools::nat_u64(v)).min()
    );
}

#[test]
fn skipping_one_draw_does_not_shift_the_others() {
    let p = parse_program(RANDOMIZED).unwrap();
    let inputs = tiny_inputs(2);
    let nominal = execute(&p, &inputs, 3, &[]).unwrap();
    let skipped = execute(&p, &inputs, 3, &[FaultAction::skip(2, 2)]).unwrap();
    let draw = |o: &ExecOutcome, i: usize| o.rng.iter().find(|(k, _)| *k == i).map(|(_, v)| v.clone());
    assert_eq!(draw(&nominal, 4), draw(&skipped, 4));
}

#[test]
fn unsatisfiable_prime_draw_crashes() {
    let p = parse_program(
        "program n\ninputs p\n0: p <- input p ; setup\n1: r <- randprime 2 avoid p ; setup\n2: return r ; output\n",
    )
    .unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert("p".to_string(), nat(6));
    let out = execute(&p, &inputs, 0, &[]).unwrap();
    assert_eq!(out.result, ExecResult::Crash(CrashReason::NoRandomPrime));
}

#[test]
fn canonical_form_ignores_register_names() {
    let a = unprotected();
    let renamed = UNPROTECTED.replace("t1", "diff").replace("t3", "hi");
    let b = parse_program(&renamed).unwrap();
    assert_ne!(a, b);
    assert_eq!(a.canonical_form(), b.canonical_form());
}

#[test]
fn compact_drops_unused_names() {
    let mut p = unprotected();
    p.fresh_reg("unused");
    let before = p.canonical_form();
    p.compact();
    assert_eq!(p.regs.len(), unprotected().regs.len());
    assert_eq!(p.canonical_form(), before);
    assert_eq!(p.fresh_reg("S"), Reg(p.regs.len() - 1));
    assert_eq!(p.regs.last().unwrap(), "S.2");
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn fault_free_runs_are_reproducible(m in 0u32..77, seed in any::<u64>()) {
            let p = parse_program(CHECKED).unwrap();
            let a = execute(&p, &tiny_inputs(m), seed, &[]).unwrap();
            let b = execute(&p, &tiny_inputs(m), seed, &[]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn read_faults_never_change_stored_registers_before_the_fault(
            m in 0u32..77,
            site in 6usize..12,
            v in 0u32..100,
        ) {
            let p = unprotected();
            let nominal = execute(&p, &tiny_inputs(m), 0, &[]).unwrap();
            let faulted = execute(
                &p,
                &tiny_inputs(m),
                0,
                &[FaultAction::randomize(FaultSite::ReadOf(site, 0), nat(v))],
            )
            .unwrap();
            for (a, b) in nominal.trace.iter().zip(&faulted.trace) {
                if a.0 >= site {
                    break;
                }
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn registers_are_written_once(m in 0u32..77) {
            let p = unprotected();
            let out = execute(&p, &tiny_inputs(m), 0, &[]).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (i, _) in &out.trace {
                let d = p.instr(*i).dst().unwrap();
                prop_assert!(seen.insert(d));
            }
        }
        #[test]
        fn resumed_runs_match_full_runs(
            algo in 0usize..crate::countermeasures::AlgoId::ALL.len(),
            m in 1u32..76,
            seed in 0u64..4,
            picks in proptest::collection::vec((any::<prop::sample::Index>(), 0u32..3, 0u32..200), 1..3),
        ) {
            let algo = crate::countermeasures::AlgoId::ALL[algo];
            let key = CrtKey::tiny();
            let p = crate::countermeasures::build(algo, &key, 5).unwrap();
            let inputs = key.inputs(&nat(m)).unwrap();
            let sites = enumerate_sites(&p, 2);
            let mut plan: FaultPlan = Vec::new();
            for (idx, kind, v) in picks {
                let site = *idx.get(&sites);
                if plan.iter().any(|a| a.site == site) {
                    continue;
                }
                plan.push(match (site, kind) {
                    (FaultSite::SkipRange(a, b), _) => FaultAction::skip(a, b),
                    (_, 0) => FaultAction::zero(site),
                    _ => FaultAction::randomize(site, nat(v)),
                });
            }
            let prefix = nominal_prefix(&p, &inputs, seed).unwrap();
            prop_assert_eq!(
                execute_resumed(&p, &inputs, seed, &plan, &prefix).unwrap(),
                execute_untraced(&p, &inputs, seed, &plan).unwrap()
            );
        }
    }
}
