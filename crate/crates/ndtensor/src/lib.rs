//! Minimal dense-tensor engine for training a 3D convolutional VAE.
//!
//! Values are `f64` throughout. A [`Tape`] records forward operations and
//! replays them backwards to produce gradients; [`gradcheck`] supplies a
//! central-difference oracle for testing those gradients.
//!
//! The operation set is intentionally closed: strided 3D convolution and
//! its adjoint, linear layers, channel biases, leaky ReLU, clamping,
//! reparameterized Gaussian sampling, energy-axis softmax cross-entropy and
//! the KL divergence to a standard normal prior.
//!
//! ```
//! use ndtensor::{Conv3dSpec, Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor::full([1, 1, 2, 2, 2], 1.0));
//! let k = tape.param(Tensor::full([1, 1, 2, 2, 2], 0.5));
//! let y = tape.conv3d(x, k, Conv3dSpec::unit()).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(k).unwrap().data(), &[1.0; 8]);
//! ```

pub mod conv;
mod error;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use conv::{conv3d, conv3d_output_shape, conv3d_transpose, Conv3dSpec};
pub use error::{Result, TensorError};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
