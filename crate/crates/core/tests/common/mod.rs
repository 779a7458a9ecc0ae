//! Helpers shared by the integration tests: finite differences, loop
//! oracles, small random fixtures and the check bodies themselves.
#![allow(dead_code)]

pub mod checks;
pub mod fd;
pub mod fixtures;
pub mod oracle;
