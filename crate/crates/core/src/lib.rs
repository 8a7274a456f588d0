pub mod charts;
pub mod directions;
pub mod error;
pub mod mock;
pub mod overthink;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod stats;
pub mod steering;
pub mod trace;

pub use error::{Error, Result};
