//! Spatio-temporal convolutional LSTM (ST-ConvLSTM) for 4D (3D + time)
//! image sequences: future-frame prediction of longitudinal tumor scans and
//! per-frame segmentation, with hand-written backward passes, ADAM training,
//! a synthetic longitudinal phantom generator and volumetric metrics.

pub mod cells;
pub mod datagen;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
