pub mod agent;
pub mod cli;
pub mod config;
pub mod diff;
pub mod eval;
pub mod error;
pub mod kg;
pub mod predictor;
pub mod sampler;
pub mod synth;

pub use cli::cli_main;
pub use error::{Error, Result};

/// The deterministic generator used by every training and sampling
/// loop; single-threaded streams keep runs bit-reproducible.
pub type TrainRng = rand_chacha::ChaCha20Rng;
