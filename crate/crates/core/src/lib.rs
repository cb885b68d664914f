//! HD-sEMG hand gesture recognition: envelope preprocessing, windowing and
//! patching, a vision transformer trained from scratch with Adam under
//! repetition-wise cross-validation, and an LDA feature baseline.

pub mod baseline;
pub mod data;
pub mod error;
pub mod report;
pub mod segment;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
