//! Resolved classes, model compilation and validation, and unrolling into a
//! ground object tree.

mod class;
mod compile;
mod ground;

pub use class::*;
pub use compile::{compile, validate_class, Model};
pub use ground::*;

use crate::dsl;
use crate::error::Result;

/// Parses and compiles source text in one step.
pub fn load(src: &str) -> Result<Model> {
    compile(&dsl::parse_model(src)?)
}
