//! Prompt-guided part feature disentangling for occluded person
//! re-identification.
#![allow(
    clippy::should_implement_trait,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

pub mod alignment;
pub mod autograd;
pub mod data;
pub mod decoder;
pub mod dims;
pub mod encoder;
pub mod error;
pub mod export;
pub mod mask;
pub mod memory;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod retrieval;
pub mod train;
pub mod visibility;

pub use autograd::{Grads, Mat, Tape, Var};
pub use dims::Dims;
pub use error::{ProfdError, Result};
pub use mask::PartMask;
