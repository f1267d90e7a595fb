//! A small convolutional network engine with analytic backpropagation.
//!
//! Two classifiers share a five-convolution trunk (3x3 convs with
//! BatchNorm and ReLU, three 3x3 stride-2 max pools): CNN-FC flattens the
//! trunk output into two 2048-wide FC-BN-ReLU blocks with dropout, CNN-GAP
//! averages each channel and applies one linear layer. Both end in softmax.

mod layers;
mod network;
mod tensor;
mod train;

pub use layers::{Aux, BnRunning, Layer, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use network::{
    arch_specs, build_cnn_fc, build_cnn_gap, Arch, ArchConfig, Cache, Gradients, NetworkState,
};
pub use tensor::Tensor;
pub use train::{
    predict_sample, predicted_class, softmax_cross_entropy, train, EpochLog, TrainConfig, TrainLog,
};
