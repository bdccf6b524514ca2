//! Deep joint source-channel coding for wireless image transmission.
//!
//! An encoder maps images to complex channel symbols under an average power
//! constraint, an AWGN channel corrupts them, and a decoder (a U-Net style
//! generator, optionally trained adversarially) reconstructs the image.

pub mod baseline;
pub mod batch;
pub mod channel;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod runspec;
pub mod tensor;
pub mod trainer;

pub use error::{JsccError, Result};
