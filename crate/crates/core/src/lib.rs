pub mod csmodel;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod fft;
pub mod image;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod recon;

pub use error::{CosmoError, Result};
pub use image::Image;
