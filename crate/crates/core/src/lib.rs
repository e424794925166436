pub mod data;
pub mod error;
pub mod experiment;
pub mod labeler;
pub mod math;
pub mod mlp;
pub mod persist;
pub mod rbm;
pub mod rng;
pub mod sampler;
pub mod vae;

pub use error::{Error, Result};
