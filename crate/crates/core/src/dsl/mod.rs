//! The `.oobn` modelling language: lexing, parsing and canonical rendering.

pub mod ast;
mod lexer;
mod parser;
mod render;

pub use ast::*;
pub use parser::{parse_model, parse_model_bytes};
pub use render::render_model;
