//! GSM-aided FDD mmWave hybrid beamforming with learned pilots, finite-bit
//! CSI feedback and an unsupervised mutual-information objective.

// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baseline_omp;
pub mod beamforming;
pub mod channel;
pub mod cmat;
pub mod config;
pub mod error;
pub mod gsm_topology;
pub mod network;
pub mod pilots;
pub mod rate;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CMatrix64 = cmat::CMatrix<f64>;
pub type ChannelMatrix64 = channel::ChannelMatrix<f64>;
pub type HybridBeamformer64 = beamforming::HybridBeamformer<f64>;
pub type GsmEfbNet64 = network::GsmEfbNet<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type CMatrix32 = cmat::CMatrix<f32>;
pub type GsmEfbNet32 = network::GsmEfbNet<f32>;
