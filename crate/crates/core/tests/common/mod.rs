//! Checks shared by the oracle, property and acceptance targets.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod invariants;
pub mod oracle;
