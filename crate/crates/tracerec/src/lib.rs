//! Trace reconstruction under deletion channels.
//!
//! The crate simulates sequence, matrix and tensor deletion channels and
//! implements reconstruction algorithms for several structured source
//! classes: sparse strings ([`sparse`]), strings whose ones are separated by
//! long gaps ([`gap`]), k-deck testing ([`kdeck`]), mean-based tournaments
//! for small matrices ([`mean_trace`]) and alignment of random matrices and
//! tensors ([`alignment`]). [`harness`] runs seeded Monte Carlo experiments
//! over all of them.

pub mod alignment;
pub mod bits;
pub mod channels;
pub mod error;
pub mod estimators;
pub mod gap;
pub mod harness;
pub mod kdeck;
pub mod mean_trace;
pub mod sparse;

pub use bits::{BitMatrix, BitString, BitTensor};
pub use channels::ChannelParams;
pub use error::{Error, Result};
