pub mod channel;
pub mod error;
pub mod evaluate;
pub mod embed;
pub mod features;
pub mod linalg;
pub mod neighbors;
pub mod pipeline;
pub mod render;
pub mod scenario;

pub use error::{Error, Result};
