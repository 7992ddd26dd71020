//! Decision-based black-box attacks on a hard-label face-verification
//! oracle, searched in the UV texture space of a morphable face model.

pub mod attacks;
pub mod detector;
pub mod dictionary;
pub mod error;
pub mod facemodel;
pub mod grid;
pub mod harness;
pub mod oracle;
pub mod renderer;
pub mod tensor_file;

pub use error::{Error, Result};
