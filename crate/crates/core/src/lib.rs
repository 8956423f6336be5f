//! Handwritten Arabic-Indic digit recognition on a small, dependency-light
//! deep-learning engine: tensors, hand-written layer gradients, Adadelta,
//! a 24-bit BMP loader, training, checkpoints and a gradient checker.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod optim;
pub mod plot;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build, Architecture, SequentialModel};
pub use tensor::{Scalar, Shape, Tensor};

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "TGOCR_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set. Results
/// do not depend on the thread count; this only bounds CPU use.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
