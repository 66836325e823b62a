//! A small dense/convolutional network stack with softmax cross-entropy,
//! backpropagation and Adam.

mod adam;
mod checkpoint;
mod network;
mod spec;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use network::{cross_entropy, init_params, Network, PROB_FLOOR};
pub use spec::{build_conv_net, build_fc_net, with_input_scale, ConvNetConfig, FcNetConfig, LayerPlan, LayerSpec, NetworkSpec};
pub use tensor::Tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Scalar type the networks run in (`f32` for training, `f64` for checks).
pub trait Real:
    Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}
