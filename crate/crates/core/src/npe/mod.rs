//! Amortized neural posterior estimation: a convolutional encoder of
//! 1000-sample segments conditions a masked autoregressive affine flow over
//! the biomarkers. All layers carry hand-written backward passes and are
//! generic over `f32` (training) and `f64` (verification).

mod encoder;
mod estimator;
mod flow;
mod layers;
mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use encoder::{Encoder, EncoderConfig, EncoderLayer};
pub use estimator::{Gradients, LabeledData, ModelConfig, Normalization, PosteriorEstimator, Prepared};
pub use flow::{log_normal, Flow, FlowConfig, Made};
pub use layers::{conv_out_len, Conv1d, Linear};
pub use train::{batch_loss, finetune_hybrid, train, Adam, TrainConfig, TrainReport};

pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}
