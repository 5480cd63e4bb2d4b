//! Command implementations behind the `advcap` binary.
//!
//! Every command is deterministic given its seed and configuration;
//! result files carry no wall-clock data so reruns are byte-identical.

pub mod commands;
pub mod dataio;
pub mod report;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const GATE: i32 = 3;
    pub const RUNTIME: i32 = 4;
}
