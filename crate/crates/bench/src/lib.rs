//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use htins_core::netlist::{parse_bench_named, CircuitGraph};

/// Directory holding the ISCAS-85 netlists.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/iscas85")
}

/// Parse a bundled circuit by name, e.g. `c880`.
pub fn load(name: &str) -> CircuitGraph {
    let path = data_dir().join(format!("{name}.bench"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_bench_named(&text, name).expect("bundled netlist parses")
}
