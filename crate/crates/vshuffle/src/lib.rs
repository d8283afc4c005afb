//! Temporal channel shuffling for video recognition: tensor core, the
//! shuffle/shift kernels, residual network builder with exact cost
//! accounting, a toy training harness, and latency benchmarking.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod parallel;
pub mod scalar;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use config::{BlockVariant, NetworkConfig, ShuffleKind};
pub use error::{Error, Result};
pub use nn::cost::{count, CostReport};
pub use nn::network::Network;
pub use tensor::{Shape, VideoTensor};
pub use temporal::{
    inverse_video_shuffle, segment_sample, temporal_shift, video_shuffle, ShiftSpec, ShuffleSpec,
};
