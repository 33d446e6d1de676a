//! Structured inference over the object tree: I/O-sets, one subnet per
//! complex object, a hypertree of linked junction trees, class-level
//! caching of collect messages, lazy calibration and cost accounting.

mod cache;
mod hypertree;

pub use cache::ClassCache;
pub use hypertree::*;
