pub mod baselines;
pub mod cvnn;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod phantom;
mod serde_util;
pub mod stack;
pub mod sweep;
pub mod ttt;

pub use error::{Error, Result};
pub use field::{ComplexField, RealField};
pub use stack::ApertureStack;
