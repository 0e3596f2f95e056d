//! Minimal CPU tensor engine used by the segmentation and classification
//! models.
//!
//! Everything runs in `f64` so that analytic gradients can be checked
//! against finite differences. A [`Graph`] records operations on a tape and
//! [`Graph::backward`] walks it in reverse; parameters live in a
//! [`ParamStore`] that the graph only borrows, and [`Adam`] mutates the
//! store between steps.
//!
//! Batch-level kernels parallelize across samples with rayon but always
//! reduce in sample order, so results are bit-identical from run to run.

mod adam;
mod error;
mod gemm;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::NnError;
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NnError>;
