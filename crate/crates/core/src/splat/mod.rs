//! CPU Gaussian splatting: projection, compositing, analytic gradients and optimization.

pub mod gaussian;
pub mod loss;
pub mod optim;
pub mod ply;
pub mod project;
pub mod render;
mod train;

pub use gaussian::{Gaussian, GaussianCloud, Remap, PARAM_COUNT};
pub use loss::LossConfig;
pub use optim::{Adam, LearningRates};
pub use render::{backward, backward_accumulate, render, Gradients, RenderOutput};
pub use train::{fit, train_step};
