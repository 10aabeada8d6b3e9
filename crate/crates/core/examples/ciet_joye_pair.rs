//! The two-fault attack on the Ciet-Joye countermeasure: zero a half and its
//! checksum so the infective factor stays 1.

use crtfi::circuit::FaultSite;
use crtfi::countermeasures::{build, AlgoId};
use crtfi::faultengine::{run_groups, CampaignSpec, KindTag, Probe};
use crtfi::keytools::CrtKey;

fn main() {
    let key = CrtKey::tiny();
    let spec = CampaignSpec::new(AlgoId::CietJoye, key.clone());
    let program = build(AlgoId::CietJoye, &key, spec.r_bits).expect("ciet-joye builds");
    let zero = |name: &str| Probe {
        site: FaultSite::WriteOf(program.writer_of(name).expect("register exists")),
        kind: KindTag::Zero,
    };
    let groups = vec![vec![zero("S'p"), zero("Spr")], vec![zero("S'q"), zero("Sqr")]];
    let report = run_groups(&spec, &program, &groups).expect("campaign runs");
    for row in &report.sites {
        println!(
            "{:<16} {}/{} {}",
            row.site,
            row.successes,
            row.attempts,
            row.class.name()
        );
    }
    for r in &report.recipes {
        println!("  message {} -> {:?} {}", r.message, r.class, r.factor);
    }
}
