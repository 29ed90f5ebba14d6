//! A small CPU neural-network stack: 1-D convolutions over feature frames,
//! dense layers, pooling, cross-entropy and contrastive objectives, Adam and
//! SGD, finite-difference gradient checks and binary checkpoints.
//!
//! Arithmetic is `f64` throughout; checkpoints store `f32`.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::gradient_check;
pub use loss::{contrastive_loss, softmax, softmax_xent, softmax_xent_soft};
pub use network::{Activation, Gradients, Layer, LayerSpec, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
pub use train::{
    evaluate, train, EpochRecord, Example, Objective, PairIndex, Pairs, Part, Supervised, Target,
    TrainConfig, TrainLog,
};
