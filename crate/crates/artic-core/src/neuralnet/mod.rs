//! Minimal feed-forward network engine.
//!
//! Plain ReLU stacks with multiple affine output heads, an optional
//! bottleneck tap, optional auxiliary-input fusion at a chosen hidden layer,
//! LHUC per-speaker activation scaling and deterministic seeded training
//! with SGD or Adam. Everything is 64-bit and single-threaded so identical
//! seeds give bit-identical parameter trajectories.

mod model;
mod train;

pub use model::{
    Activation, AuxInput, Forward, ForwardCache, Gradients, Head, HeadKind, Layer, LayerSpec,
    MlpModel, Mode, ModelSpec, ParamGrad,
};
pub use train::{
    evaluate_loss, fit, lhuc_adapt, LossSpec, Optimizer, TrainConfig, TrainItem, TrainReport,
};
