//! Small dense-tensor toolkit: row-major `f64` matrices, a recording tape
//! with reverse-mode gradients, AdamW, a finite-difference gradient
//! checker and a binary checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use error::{Result, TensorError};
pub use gradcheck::{check_primitives, grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Index, Tape, Var};
pub use tensor::Tensor;
