pub mod cirusim;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hawkes;
mod linalg;
pub mod model_free;
pub mod pipeline;
pub mod preprocess;
pub mod simgen;

pub use error::{Error, Result};
