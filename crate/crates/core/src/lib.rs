//! Cooperative multi-cell mmWave beam training.
//!
//! Every base station estimates its beamspace channel to a single user from a
//! few compressive pilot slots, then sharpens that estimate with the rays its
//! neighbours saw. The crossing points of the rays of two stations are the only
//! places the user can be, which turns a pair of noisy estimates into a
//! posterior over beam pairs.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod measurement;
pub mod recovery;

pub use channel::{CMatrix, CVector, ChannelMatrix, Codebook, Codebooks, VirtualChannel};
pub use error::{RapidError, Result};
pub use fusion::{BeamProbabilityMap, FusionParams, SharedRays};
pub use geometry::{BaseStation, BipolarIndex, InterceptTable, NetworkDeployment};
pub use measurement::{BeamSchedule, MeasurementRecord, Terminals};
pub use recovery::{RecoveryConfig, SolverKind, VirtualChannelEstimate};
