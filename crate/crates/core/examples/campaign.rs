//! Order-1 campaign on one countermeasure, listing every site that leaked.
//!
//! `cargo run --release --example campaign -- [algo] [p q] [r_bits]`

use crtfi::countermeasures::AlgoId;
use crtfi::faultengine::{run_campaign, CampaignSpec, KindTag};
use crtfi::keytools::{derive_crt, RsaKey};
use crtfi::modmath::Nat;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let algo: AlgoId = args
        .first()
        .map_or("shamir", String::as_str)
        .parse()
        .expect("known algo");
    let prime = |i: usize, d: u32| args.get(i).map_or(Nat::from(d), |s| s.parse().expect("decimal prime"));
    let key = derive_crt(&RsaKey::from_primes(prime(1, 241), prime(2, 233), None).expect("valid primes"));
    let mut spec = CampaignSpec::new(algo, key);
    spec.r_bits = args.get(3).map_or(4, |s| s.parse().expect("bit count"));
    spec.kinds = [KindTag::Zero, KindTag::Randomize].into();
    let report = run_campaign(&spec).expect("campaign runs");
    println!("{} ({:.2?})", report.summary_line(), report.runtime);
    for r in report.sites.iter().filter(|r| r.successes > 0) {
        println!(
            "  {:<14} {:<10} {:>6}/{:<6} {:.4} {}",
            r.site,
            r.kind,
            r.successes,
            r.attempts,
            r.fraction,
            r.class.name()
        );
    }
}
