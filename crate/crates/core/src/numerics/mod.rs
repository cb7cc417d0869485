//! Minimal differentiable-computation kernel shared by all learned modules.

pub mod checkpoint;
pub mod gradcheck;
pub mod grid;
pub mod init;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use grid::{clip_unit, correlate2d, correlate2d_offsets, dense, softmax, CorrGeometry, Grid2D, Padding};
pub use optim::{rmsprop_update, RmsProp};
pub use params::{Grads, ParamId, ParamSet, ParamStore};
pub use tape::{ConvSpec, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
