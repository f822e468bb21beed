//! Small differentiable model core: tensors, the reference MLP/CNN, softmax
//! cross-entropy with hand-written backpropagation, and Adam.

mod adam;
mod arch;
mod model;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use arch::{Architecture, ParamSpec};
pub use model::{argmax, init_params, ModelParameters, NamedTensor};
pub use real::Real;
pub use tensor::Tensor;
