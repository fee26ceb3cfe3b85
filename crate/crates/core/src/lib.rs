//! Floquet-engineered stabilizer pumping in Rydberg atom arrays.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod floquet;
pub mod linalg;
pub mod noise;
pub mod lindblad;
pub mod protocol;
pub mod stabilizer;
pub mod system;

/// Library version recorded in emitted tables.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
