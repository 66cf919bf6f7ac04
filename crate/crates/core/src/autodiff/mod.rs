//! Reverse-mode differentiation over a fixed set of primitives.

pub mod gradcheck;
pub mod suite;
mod tape;

pub use gradcheck::{gradcheck, CoordStatus, GradcheckReport};
pub use tape::{Backward, Tape, Var};
