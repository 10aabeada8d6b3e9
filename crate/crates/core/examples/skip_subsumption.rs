//! For each instruction-skip window, a zeroing or randomizing fault with the
//! same observable result.

use crtfi::countermeasures::{build, AlgoId};
use crtfi::faultengine::check_skip_subsumption;
use crtfi::keytools::CrtKey;

fn main() {
    let key = CrtKey::tiny();
    let algo: AlgoId = std::env::args()
        .nth(1)
        .as_deref()
        .unwrap_or("straightforward")
        .parse()
        .expect("known algo");
    let program = build(algo, &key, 5).expect("builds");
    for row in check_skip_subsumption(&program, &key, 2).expect("search runs") {
        let window = row.window.map_or("-".to_string(), |(a, b)| format!("{a}-{b}"));
        let witness = match &row.witness {
            Some(plan) => plan.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
            None => "NONE".to_string(),
        };
        println!(
            "M={:<3} skip {:<6} {:<24} {}",
            row.message,
            window,
            format!("{:?}", row.result),
            witness
        );
    }
}
