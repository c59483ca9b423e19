//! Joint motion planning and uplink power control for a V2X-assisted lane change.
//!
//! The ego vehicle (EV) plans a receding-horizon trajectory around a lead
//! vehicle (LV) in its own lane and a target/follow pair (TV, FV) in the lane
//! it merges into. Neighbour positions arrive over a fading uplink whose
//! outage probability depends on each neighbour's transmit power, and stale
//! positions are hedged with an optimised safety margin `m_d`.
//!
//! Layout:
//! - [`special`]: Bessel I0, first-order Marcum Q, conditional noncentral chi-square CDF.
//! - [`comm`]: imperfect-CSI channel, outage probability and its power gradient,
//!   delay and position-error models.
//! - [`vehicle`]: unicycle kinematics, linearisation, tracking cost, safety
//!   constraints and collision detection.
//! - [`solver`]: block coordinate descent over the trajectory block (log-barrier
//!   interior point) and the power block (projected gradient with budget projection).
//! - [`sim`]: the four-vehicle lane-change scenario, baseline policies and
//!   Monte Carlo collision statistics.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod comm;
mod error;
pub mod sim;
pub mod solver;
pub mod special;
pub mod vehicle;

pub use error::{Error, Result};
