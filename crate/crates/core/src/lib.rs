//! Deterministic simulator for OS-level redundant multithreading.

pub mod experiment;
pub mod faults;
pub mod master;
pub mod memory;
pub mod platform;
pub mod vm;
