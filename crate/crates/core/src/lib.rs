pub mod corpus;
pub mod dsl;
pub mod error;
pub mod flatten;
pub mod inference;
pub mod model;
pub mod msbn;
pub mod session;
pub mod typesys;

pub use error::{Diagnostic, Error, ErrorCode, Pos, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dsl.md")]
    mod dsl {}
    #[doc = include_str!("../../../book/src/types.md")]
    mod types {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/http.md")]
    mod http {}
}
