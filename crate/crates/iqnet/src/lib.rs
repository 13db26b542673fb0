//! Simulation and verification toolkit for interference queueing networks
//! on finite d-dimensional lattices.
//!
//! A queue sits at every site of `[-n, n]^d`. Arrivals are independent
//! Poisson streams of rate `lambda`; the departure rate at site `i` is
//! `X_i / sum_j a_j X_{i-j}` for a symmetric interference kernel `a` with
//! `a_0 = 1` (and `0/0 = 0`), so crowded neighborhoods slow every queue in
//! them down. The crate provides:
//!
//! - exact event-driven forward simulation by thinning, with synchronous
//!   couplings for ordering comparisons ([`dynamics`]);
//! - a deterministic, key-addressed noise field so couplings and backward
//!   runs replay identical randomness ([`noise`]);
//! - a backward (coupling-from-the-past style) sampler of the stationary
//!   state ([`cftp`]);
//! - a brute-force stationary oracle for tiny instances ([`oracle`]);
//! - estimators for moments, tails, spatial covariance, maxima in growing
//!   boxes, and ergodic box averages ([`stats`]);
//! - executable checks of the quantitative laws the process satisfies:
//!   the stationary mean formula, a moment recursion, an exponential
//!   moment bound with explicit constants, two-sided tail bounds, and
//!   independence across frozen separator strips ([`verify`]).
//!
//! The mdbook under `book/` walks through the concepts; its code snippets
//! compile and run as doc-tests of [`guide`].

pub mod cftp;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod guide;
pub mod kernel;
pub mod noise;
pub mod oracle;
pub mod stats;
pub mod verify;

pub use domain::{Boundary, Domain, FrozenStripSchedule, Resolved};
pub use dynamics::{
    apply_event, couple_simulate, service_rate, simulate, CoupledVariant, NeighborTable,
    QueueField, Trajectory,
};
pub use error::{Error, Result};
pub use kernel::InterferenceKernel;
pub use noise::{
    generate_slab, merged_event_stream, Event, EventKind, NoiseKey, NoiseSlab, StreamKind,
};
