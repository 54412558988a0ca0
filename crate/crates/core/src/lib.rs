pub mod attribution;
pub mod checkpoint;
pub mod clickme;
pub mod critics;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;

pub use error::{Error, Result};
pub use image::Image;
