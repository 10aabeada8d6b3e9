//! The binomial shortcut (1 + r)^d = 1 + d r mod r^2, and the number of
//! verifications in the two Vigilant variants.

use crtfi::countermeasures::{build, AlgoId};
use crtfi::keytools::CrtKey;
use crtfi::modmath::{binomial_checksum, mod_exp, Nat};

fn main() {
    let r = Nat::from(13u32);
    for d in [0u32, 1, 12, 100, 155] {
        let d = Nat::from(d);
        let fast = binomial_checksum(&d, &r);
        let slow = mod_exp(&(&r + 1u32), &d, &(&r * &r)).expect("non-zero modulus");
        println!("d={d}: {} {}", fast.value(), slow.value());
    }
    let key = CrtKey::tiny();
    for algo in [AlgoId::Vigilant, AlgoId::VigilantSimplifiedInfective] {
        let p = build(algo, &key, 5).expect("builds");
        println!("{algo}: {} verifications", p.verifications().len());
    }
}
