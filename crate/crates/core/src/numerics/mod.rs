//! Dense numerics with a reverse-mode tape, finite-difference gradient
//! checks, Adam, and the flat parameter file format.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_report, relative_error, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use tape::{log_softmax, softmax, Gradients, Tape, Var};
pub use tensor::{ParamId, ParameterStore, Scalar, Tensor};
