pub mod assignment;
pub mod ballint;
pub mod coreset;
pub mod error;
pub mod matroid;
pub mod metric;
pub mod model;
pub mod oracle;
pub mod scatter;
pub mod solver;

pub use error::{EpasError, Result};
