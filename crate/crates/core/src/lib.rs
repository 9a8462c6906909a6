//! Simulation of concatenated partial teleportation: a high-dimensional
//! system is interrogated by a train of low-dimensional pulses, the pulses
//! are kept in a first-in-last-out memory, and a receiver replays them
//! backwards (or emulates the replay with forward-time evolution and an
//! antiunitary reversal) to rebuild the state.

pub mod analysis;
pub mod chain;
pub mod classify;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod memory;
pub mod pipeline;
pub mod protocol;
pub mod purify;
pub mod random;
pub mod selftest;
pub mod trace;

pub use error::{Result, TrekError};
