//! Simulation toolkit for measure-valued Heath-Jarrow-Morton term-structure
//! models whose forward curves jump at predictable times.
//!
//! Forward rates are finite signed measures on time-to-maturity (atoms plus a
//! piecewise constant density on a grid). The crate provides
//!
//! - exact arithmetic on such measures, including the adjoint shift semigroup
//!   and the measure-times-distribution-function product ([`measures`]),
//! - finite-dimensional vector-measure integration, semivariation, and
//!   cylindrified integrals with operator-norm certificates ([`integration`]),
//! - seeded multi-factor Brownian drivers and elementary Ito integration
//!   ([`noise`]),
//! - an exponential-Euler mild solver and a Picard fixed-point iteration for
//!   measure-valued stochastic evolution equations ([`evolution`]),
//! - the HJM layer: no-arbitrage drift construction, bond and energy-futures
//!   pricing, roll-over bank accounts, Monte Carlo martingale tests
//!   ([`termstructure`]),
//! - scenario configs, JSON/CSV reporting, and the check runners behind the
//!   `mvhjm` command-line tool ([`scenario`], [`report`], [`runner`]).

pub mod error;
pub mod evolution;
pub mod integration;
pub mod measures;
pub mod noise;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod termstructure;

pub use error::{Error, Result};
pub use measures::{CellFunction, MaturityGrid, SignedMeasure};
