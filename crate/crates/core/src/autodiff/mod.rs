//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor) values.

mod conv;
pub(crate) mod geom;
mod interp;
mod loss;
mod norm;
pub(crate) mod pool;
mod tape;

pub use conv::ConvSpec;
pub use loss::BCE_EPS;
pub use norm::{BnConfig, BnStats, Mode};
pub use tape::{Branches, Tape, Var};

