//! Frequency-domain MIMO equalization for space-division-multiplexed
//! coherent optical links, with a Stokes-space (SSA) and an LMS error
//! function, plus the channel and carrier-recovery machinery needed to
//! simulate them end to end.

pub mod capture;
pub mod carrier;
pub mod channel;
pub mod config;
pub mod equalizer;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod linalg;
pub mod report;
pub mod signal;

pub use error::{Error, Result};
