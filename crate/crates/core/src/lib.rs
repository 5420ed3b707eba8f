//! Predictive delta codec for lidar range images.
//!
//! Each pixel is predicted from already-decoded context (same frame and,
//! optionally, the previous frame), only the integer prediction residuals are
//! stored, and those are entropy-coded. Decoding replays the predictions and
//! adds the residuals back, reconstructing the quantized image exactly.

pub mod codec;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod kdtree;
pub mod metrics;
pub mod predictor;
pub mod scene;

pub use error::{Error, Result};
