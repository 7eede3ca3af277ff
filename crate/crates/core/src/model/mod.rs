//! A small CAM-compatible convolutional classifier.
//!
//! Architecture: repeated blocks of 3x3 conv (stride 1, zero padding 1),
//! ReLU and optional 2x2 mean pool, followed by global average pooling and
//! a linear head. Forward and backward passes are analytic; mean pooling
//! keeps the backward pass simple and the CAM smooth.

mod checkpoint;
mod net;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use net::{
    backward, backward_batch, cam, forward, forward_batch, forward_batch_seq, init_params,
    ConvLayer, ForwardTrace, NetConfig, Params,
};
pub use optim::{lr_schedule, sgd_step, OptState};
