//! Exact transfer-matrix computations and Monte Carlo concentration experiments
//! for directed polymers on the 1+1 dimensional lattice in Gaussian disorder.
//!
//! The crate is organized around five layers:
//!
//! * [`lattice`] — simple-random-walk bridge combinatorics on the space-time cone:
//!   admissible sites, bridge endpoint standardization, log bridge probabilities.
//! * [`environment`] — i.i.d. standard Gaussian disorder fields attached to cone
//!   sites, with reproducible counter-based seeding, Euclidean geometry (distance,
//!   constant shift), and a binary on-disk format.
//! * [`polymer`] — quenched point-to-point partition functions, Gibbs path
//!   marginals and replica overlaps, all computed in log-space.
//! * [`replica`] — exact annealed two-replica computations: tilted pair
//!   transfer matrices under bridge conditioning, homogeneous pinning partition
//!   functions for the difference walk, convexity/halving inequality checks.
//! * [`montecarlo`] — seeded, scheduler-independent Monte Carlo experiments that
//!   confront the exact quantities above with sampled disorder: mean and second
//!   moment checks, lower-tail curves, negative moments, the explicit constants
//!   ledger, and cross-scale convergence probes.
//!
//! The [`cli`] module wires everything into the `polymer-lab` binary.

pub mod cli;
pub mod environment;
pub mod error;
pub mod lattice;
pub mod montecarlo;
pub mod polymer;
pub mod replica;

pub use error::{Error, Result};
