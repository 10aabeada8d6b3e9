//! Random plans of several randomizing faults against a correct
//! countermeasure at 48-bit primes and a 32-bit checksum prime.
//!
//! `cargo run --release --example sampled_high_order -- [algo] [order] [count]`

use crtfi::countermeasures::{build, AlgoId};
use crtfi::faultengine::{run_sampled, CampaignSpec, KindTag};
use crtfi::keytools::{derive_crt, RsaKey};
use crtfi::modmath::Nat;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let algo: AlgoId = args
        .first()
        .map_or("aumuller", String::as_str)
        .parse()
        .expect("known algo");
    let order = args.get(1).map_or(3, |s| s.parse().expect("order"));
    let count = args.get(2).map_or(2000, |s| s.parse().expect("count"));
    let p = Nat::from(281_474_976_710_597u64);
    let q = Nat::from(281_474_975_662_009u64);
    let key = derive_crt(&RsaKey::from_primes(p, q, None).expect("valid primes"));
    let mut spec = CampaignSpec::new(algo, key.clone());
    spec.r_bits = 32;
    spec.order = order;
    spec.kinds = [KindTag::Randomize].into();
    let program = build(algo, &key, spec.r_bits).expect("builds");
    let report = run_sampled(&spec, &program, count).expect("campaign runs");
    println!(
        "{} successes={} ({:.2?})",
        report.summary_line(),
        report.totals.successes,
        report.runtime
    );
}
