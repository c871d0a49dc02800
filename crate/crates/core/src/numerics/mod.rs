//! Dense fully-connected networks with hand-written backprop.
//!
//! Shared by the Q-network and the identity head. Networks are generic over
//! [`Real`] so the same code runs in single precision for training and in
//! double precision for gradient verification.

pub mod checkpoint;
mod gradcheck;
pub mod loss;
mod net;
mod optim;
mod real;

pub use gradcheck::{finite_difference_check, GradCheckReport, FD_STEP};
pub use net::{Activation, DenseNet, ForwardCache, Gradients, Layer, LayerGrad};
pub use optim::{Adam, Optimizer, Sgd};
pub use real::{Dtype, Real};
