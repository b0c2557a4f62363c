//! Data generators, the repetition harness and the two small-scale studies.

mod generators;
mod harness;
mod study;

pub use generators::*;
pub use harness::*;
pub use study::*;
