//! Dense tensors and seedable random streams.

mod rng;
mod tensor;

pub use rng::{Rng, Stream};
pub(crate) use tensor::sign;
pub use tensor::{ElementwiseOp, Tensor};
