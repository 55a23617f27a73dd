pub mod cli;
pub mod error;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
