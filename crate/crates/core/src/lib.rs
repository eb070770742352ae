//! Bi-level label-transfer meta-learning at desk scale.
//!
//! The crate is organized around a small reverse-mode differentiation tape
//! ([`tape`]) with the second-order capability needed for one-step-unrolled
//! meta-gradients ([`engine`]), the encoder/head/label-transfer models
//! ([`model`]), soft-label losses ([`loss`]), the bi-level training loop and
//! its baselines ([`train`]), synthetic task-pair generators and the k-shot
//! split protocol ([`data`]), and evaluation metrics ([`metrics`]).
//!
//! Everything here is pure compute over `alloc` collections; IO, file
//! formats, and the experiment CLI live in the companion `metaxt-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod engine;
pub mod error;
pub mod loss;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tape;
pub mod train;
pub mod verify;

pub use error::CoreError;
pub use params::{FlatParams, Group, GroupVecs, ParamLayout};
pub use tape::{NodeId, Shape, Tape};

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;
