//! One data fault plus one fault that disables a verification, before and
//! after doubling every verification.

use crtfi::countermeasures::{build, AlgoId};
use crtfi::faultengine::{data_probes, run_groups, verification_probes, CampaignSpec, KindTag, ProbeGroup};
use crtfi::keytools::{derive_crt, RsaKey};
use crtfi::modmath::Nat;
use crtfi::transforms::harden;

fn main() {
    let key = derive_crt(&RsaKey::from_primes(Nat::from(241u32), Nat::from(233u32), None).expect("valid primes"));
    let mut spec = CampaignSpec::new(AlgoId::AumullerInfective, key.clone());
    spec.r_bits = 4;
    spec.exhaustive_threshold = 0;
    // Primitive roots modulo p, q and every 4-bit r.
    spec.messages = [149u32, 227, 55127].into_iter().map(Nat::from).collect();
    let plain = build(spec.algo, &key, spec.r_bits).expect("builds");
    for (label, program) in [
        ("plain", plain.clone()),
        ("hardened x2", harden(&plain, 2).expect("hardens")),
    ] {
        let data = data_probes(&program, &[KindTag::Zero, KindTag::Randomize].into());
        let groups: Vec<ProbeGroup> = verification_probes(&program)
            .into_iter()
            .flat_map(|v| {
                data.iter()
                    .map(move |d| if d.site < v.site { vec![*d, v] } else { vec![v, *d] })
            })
            .collect();
        let report = run_groups(&spec, &program, &groups).expect("campaign runs");
        println!(
            "{label}: {} groups, {} plans, {} breaks",
            groups.len(),
            report.totals.plans,
            report.totals.breaks
        );
    }
}
