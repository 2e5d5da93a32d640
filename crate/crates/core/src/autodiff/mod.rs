//! Tape-based reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)
//! values, with the layer primitives the detector needs.

mod conv;
mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod loss;
mod norm;
mod pool;

pub use conv::ConvGeometry;
pub use gradcheck::{relative_error, GradCheck, GradCheckReport};
pub use graph::{Activation, Graph, Mode, Var};
pub use loss::softmax;
pub use norm::{BatchStats, RunningStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
