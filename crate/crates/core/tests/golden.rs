//! Program listings at the tiny key, frozen in `tests/golden`.

use std::path::PathBuf;

use crtfi::circuit::{parse_program, validate};
use crtfi::countermeasures::{build, AlgoId};
use crtfi::keytools::CrtKey;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

#[test]
fn tiny_key_file_is_the_worked_example() {
    let key = CrtKey::from_key_file(&std::fs::read_to_string(golden("tiny.key")).unwrap()).unwrap();
    assert_eq!(key, CrtKey::tiny());
}

#[test]
fn dumps_match_frozen_listings() {
    let key = CrtKey::tiny();
    for algo in AlgoId::ALL {
        let program = build(algo, &key, 5).unwrap();
        let want = std::fs::read_to_string(golden(&format!("{algo}.dump"))).unwrap();
        assert_eq!(program.dump(), want, "{algo}");
    }
}

#[test]
fn frozen_listings_parse_back() {
    let key = CrtKey::tiny();
    for algo in AlgoId::ALL {
        let text = std::fs::read_to_string(golden(&format!("{algo}.dump"))).unwrap();
        let parsed = parse_program(&text).unwrap();
        assert!(validate(&parsed).is_empty(), "{algo}");
        assert_eq!(parsed.dump(), text, "{algo}");
        assert_eq!(parsed, build(algo, &key, 5).unwrap(), "{algo}");
    }
}
