//! A desk-scale laboratory for detecting UWB distance-enlargement attacks
//! at energy-detector receivers.
//!
//! The crate is organised the way a frame travels:
//!
//! - [`codec`] draws verification codes (random positions, random phases).
//! - [`channel`] applies path loss, superposes sender and adversary pulses,
//!   adds AWGN, and lays frames onto a recorded [`channel::Timeline`].
//! - [`adversary`] plans random-phase injections and delayed replays.
//! - [`receiver`] runs the energy checks, the randomized code test and
//!   backtracking ToA selection.
//! - [`protocol`] ties two detections into a commit/verify ranging session.
//! - [`analytic`] evaluates the closed-form attack and false-positive
//!   probabilities, in log space and in exact rationals.
//! - [`montecarlo`] estimates the same quantities by simulation.
//! - [`walkthrough`] recomputes the small numerical example end to end.
//!
//! Indices are 0-based throughout. Powers are dimensionless "power units";
//! received and transmitted powers differ by the path-loss ratio only.

pub mod adversary;
pub mod analytic;
pub mod channel;
pub mod codec;
mod error;
pub mod montecarlo;
pub mod protocol;
pub mod receiver;
pub mod walkthrough;

pub use error::{Error, Result};

/// Speed of light in meters per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// One-way time of flight for a distance, in nanoseconds.
pub fn tof_ns(distance_m: f64) -> f64 {
    distance_m / SPEED_OF_LIGHT_M_PER_NS
}

/// Distance covered by a one-way time of flight.
pub fn distance_m(tof_ns: f64) -> f64 {
    tof_ns * SPEED_OF_LIGHT_M_PER_NS
}

/// SplitMix64 finaliser. Used to derive independent per-trial and
/// per-window seeds from structured keys.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed for a structured key such as `(k, trial_index)`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}
