//! Pulse-level simulation of parametrically driven, bus-coupled transmons.
//!
//! Frequencies are angular (rad/s) and times are in seconds throughout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod noise;
pub mod optim;
pub mod pulseshape;
pub mod qops;
pub mod special;
pub mod tomography;
pub mod units;
pub mod xeb;

pub use error::{Error, Result};
