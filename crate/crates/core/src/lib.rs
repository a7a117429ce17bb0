#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait, clippy::needless_range_loop)]

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gate;
pub mod metrics;
pub mod model;
pub mod moe;
pub mod opcount;
pub mod rng;
pub mod sax;
pub mod tensor;
pub mod training;

pub use error::{MaestroError, Result};
pub use tensor::Tensor;
