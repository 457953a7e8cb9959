//! A minimal dense-tensor engine: the layers, gradients, optimizer and
//! checkpoint format needed to train the fusion network without an external
//! machine-learning framework. All arithmetic is 64-bit.

mod checkpoint;
mod layers;
mod model;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FMC_MAGIC, FMC_VERSION,
};
pub use layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, l1_loss,
    relu_backward, relu_forward, BatchNormLayer, BnGrads, ConvGrads, ConvLayer, Mode, BN_EPSILON,
    BN_MOMENTUM,
};
pub use model::{
    sgd_step, AblationFlags, Architecture, ForwardCache, FusionModel, ModelGrads, OptimizerState,
};
pub use tensor::Tensor4;
