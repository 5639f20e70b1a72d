//! Shared inputs for the criterion benches.

use cgrelax::ProblemSpec;

/// A shipped problem file from `problems/`.
pub fn problem(name: &str) -> ProblemSpec {
    let path = format!("{}/../../problems/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    ProblemSpec::from_json(&text).expect("shipped problem validates")
}
