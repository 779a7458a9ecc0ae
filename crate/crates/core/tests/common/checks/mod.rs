//! Check bodies shared by the per-topic test files and the acceptance
//! runner. Each check panics on failure.

pub mod closed_forms;
pub mod gradients;
pub mod invariants;
pub mod oracles;
pub mod round_trips;

pub type Check = (&'static str, fn());
