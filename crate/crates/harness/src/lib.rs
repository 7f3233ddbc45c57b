//! Drivers behind the `ppf` command: input scenarios, oracle verification
//! sweeps, redistribution benchmarks and the ratios derived from them.

pub mod bench;
pub mod cli;
pub mod report;
pub mod scenario;
pub mod verify;
