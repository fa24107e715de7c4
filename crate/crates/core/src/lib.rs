pub mod analysis;
pub mod attribute_privacy;
pub mod behaviors;
pub mod distinguishing;
pub mod dp_stats;
pub mod ecosystem;
pub mod error;
pub mod experiments;
pub mod feature_space;
pub mod rng;

pub use error::{Error, Result};
