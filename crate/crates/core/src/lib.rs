//! Hand/object segmentation from depth maps.
//!
//! The crate covers the whole pipeline: auto-annotation of aligned
//! depth/color frames, a small reverse-mode autodiff engine, the
//! dense-attention segmentation network, boundary-aware losses, evaluation
//! metrics and a reproducible training loop.

pub mod annotation;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod frame;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Padding, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
