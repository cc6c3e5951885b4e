//! Core of the surface-EMG decoding pipeline.
//!
//! Frames arrive from the amplifier ([`proto`]), are buffered into 180 ms
//! windows, spatially filtered and reduced to 32 RMS features ([`dsp`]),
//! normalized and classified by a boosted tree ensemble ([`decoder`]), and
//! stabilized with conformal prediction sets plus a temporal majority filter
//! ([`conformal`]). [`kinematics`] supplies guide trajectories and labels,
//! [`session`] the recording format and metrics, and [`io_out`] the
//! downstream datagram formats.

pub mod conformal;
pub mod decoder;
pub mod dsp;
pub mod io_out;
pub mod kinematics;
pub mod pipeline;
pub mod proto;
pub mod session;
