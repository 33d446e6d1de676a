pub mod engine;
pub mod factor;
pub mod jtree;
pub mod triangulate;

pub use engine::CliqueNet;
pub use factor::Factor;
pub use jtree::JunctionTree;
