//! Recover d and e from the CRT 5-tuple (p, q, dp, dq, iq).

use crtfi::keytools::{gen_key, recover_d, recover_e, CrtKey};

fn main() {
    let tiny = CrtKey::tiny().stripped();
    println!(
        "p=7 q=11: d={} e={} lambda={}",
        recover_d(&tiny).unwrap(),
        recover_e(&tiny).unwrap(),
        tiny.lambda()
    );
    for seed in 0..5 {
        let (rsa, crt) = gen_key(16, seed).expect("key");
        let d = recover_d(&crt.stripped()).expect("recovers");
        println!(
            "N={} d mod lambda={} recovered={} e={}",
            rsa.n,
            &rsa.d % &rsa.lambda,
            d,
            recover_e(&crt).unwrap()
        );
    }
}
