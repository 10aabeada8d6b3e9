//! One fault in an unprotected CRT signature reveals a prime factor.

use crtfi::circuit::{execute_untraced, FaultAction, FaultSite};
use crtfi::countermeasures::{build, AlgoId};
use crtfi::keytools::CrtKey;
use crtfi::modmath::{bellcore_extract, Nat};

fn main() {
    let key = CrtKey::tiny();
    let program = build(AlgoId::Unprotected, &key, 8).expect("unprotected builds");
    let inputs = key.inputs(&Nat::from(2u32)).expect("message below N");
    let good = execute_untraced(&program, &inputs, 0, &[]).expect("runs");
    let good = good.signature().expect("fault-free signature");
    println!("S = {good}");

    for half in ["Sp", "Sq"] {
        let site = FaultSite::WriteOf(program.writer_of(half).expect("half exists"));
        let faulted =
            execute_untraced(&program, &inputs, 0, &[FaultAction::randomize(site, Nat::from(5u32))]).expect("runs");
        let faulted = faulted.signature().expect("no check, so a value is released");
        let verdict = bellcore_extract(&key.modulus(), good, faulted, &key.p, &key.q);
        println!(
            "{half} <- 5: S~ = {faulted}, {:?} factor {:?}",
            verdict.class, verdict.factor
        );
    }
}
