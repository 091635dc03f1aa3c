#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Location-aware deep reinforcement learning for RIS-aided mmWave MIMO links.
//!
//! The crate covers the whole pipeline: geometric Saleh-Valenzuela channel
//! synthesis ([`channel`]), the rate objective and its constraint handling
//! ([`env`]), an imitation environment network that predicts the composite
//! channel from device coordinates ([`ien`]), a DDPG agent that optimizes the
//! RIS phases and transmit covariance against either the imitation network or
//! the true channel ([`ddpg`]), and the comparison baselines ([`baselines`]).

pub mod baselines;
pub mod channel;
pub mod config;
pub mod csvio;
pub mod ddpg;
pub mod env;
pub mod error;
pub mod experiments;
pub mod ien;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod rng;

pub use channel::{ArrayConfig, ChannelPair, PathLossConfig, Point3, ScenarioGeometry};
pub use config::ScenarioConfig;
pub use env::{EnvConfig, RisPhases, TransmitCovariance};
pub use error::{Error, Result};
pub use linalg::{CMatrix, RealVector, C64};
pub use mlp::{ActivationKind, Mlp, SgdConfig};
pub use rng::RngStream;
