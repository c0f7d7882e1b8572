//! PFT-SSR: stereo image super-resolution with a parallax fusion
//! transformer, built on a small self-contained tensor engine with
//! reverse-mode differentiation. Everything runs on CPU and is
//! deterministic: repeated runs produce bit-identical results.

pub mod backbone;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;
pub mod window_attn;

pub use error::{Error, Result};
pub use model::{build_model, Model, ModelConfig};
pub use params::{ParamBag, ParameterStore, Scope};
pub use tensor::{Element, GradTape, Gradients, Tensor};
