//! Tensor completion by lifted, sketched alternating least squares.
//!
//! Dense tensors are row-major with the last index fastest. Modes are
//! numbered from zero.

pub mod completion;
pub mod coupled;
pub mod error;
pub mod inner;
pub mod io;
pub mod lifted;
pub mod linalg;
pub mod mask;
pub mod model;
pub mod structured;
pub mod synthetic;
pub mod tensor;

pub use completion::{run_completion, AlsPlan, FitTrace, ModelSpec};
pub use error::{Error, Result};
pub use inner::{InnerSolver, Strategy};
pub use mask::{MaskedTensor, ObservationMask};
pub use model::{CpModel, Model, TtModel, TuckerModel};
pub use tensor::{rre, DenseTensor};
