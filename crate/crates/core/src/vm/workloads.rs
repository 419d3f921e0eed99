//! Workloads shipped with the simulator.

use std::collections::BTreeMap;

use super::{assemble_with, ParseError, Program};

pub const COMPUTE_BOUND: &str = include_str!("../../workloads/compute_bound.rvm");
pub const SYSCALL_HEAVY: &str = include_str!("../../workloads/syscall_heavy.rvm");
pub const CACHE_BOUND: &str = include_str!("../../workloads/cache_bound.rvm");
pub const MIXED_PHASE: &str = include_str!("../../workloads/mixed_phase.rvm");

pub const NAMES: [&str; 4] = [
    "compute_bound",
    "syscall_heavy",
    "cache_bound",
    "mixed_phase",
];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name.strip_suffix(".rvm").unwrap_or(name) {
        "compute_bound" => COMPUTE_BOUND,
        "syscall_heavy" => SYSCALL_HEAVY,
        "cache_bound" => CACHE_BOUND,
        "mixed_phase" => MIXED_PHASE,
        _ => return None,
    })
}

/// Assembles a bundled workload with `.equ` overrides applied.
pub fn load(name: &str, params: &BTreeMap<String, u64>) -> Option<Result<Program, ParseError>> {
    source(name).map(|src| assemble_with(src, params))
}
