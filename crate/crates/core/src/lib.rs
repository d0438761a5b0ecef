pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod sampler;
pub mod synth;
pub mod tokenizer;
pub mod tokens;

pub use error::{Error, Result};
