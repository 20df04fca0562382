pub mod cells;
pub mod classifier;
pub mod data;
pub mod error;
pub mod layer;
pub mod numerics;
pub mod optimizer;
pub mod train;

pub use error::{Error, Result};

pub use cells::CellKind;
pub use data::{Dataset, DatasetTriple, Split};
pub use numerics::{Activation, DType, Rng, Scalar, Tensor};
pub use train::{Model, ModelConfig};
