//! Turn a guard-based countermeasure into its infective form and back.

use crtfi::countermeasures::{build, AlgoId};
use crtfi::keytools::CrtKey;
use crtfi::transforms::{to_infective, to_testbased};

fn main() {
    let program = build(AlgoId::Aumuller, &CrtKey::tiny(), 5).expect("aumuller builds");
    let infective = to_infective(&program).expect("has guards");
    println!("{}", infective.dump());
    let back = to_testbased(&infective).expect("canonical infection");
    println!(
        "round trip identical: {}",
        back.canonical_form() == program.canonical_form()
    );
}
