//! Diffusion approximation of the many-server Erlang-C queue.
//!
//! The library is organised around one pipeline. [`params`] turns a triple
//! (arrival rate, service rate, server count) into the drift and diffusion
//! coefficients of two approximating diffusions on the square-root scale.
//! [`chain`] computes the exact stationary distribution of the scaled birth
//! and death chain. [`density`] builds the stationary densities of the two
//! diffusions from analytic tail masses plus adaptive quadrature in the
//! center. [`stein`] solves the associated Poisson equation and evaluates
//! the discrete-generator expansion that drives the error analysis, and
//! [`metrics`] turns all of the above into comparison numbers: moment
//! errors, Kolmogorov and point-mass distances, convergence-rate fits, and
//! a Wasserstein-type lower bound.
//!
//! Everything is plain `f64`. Computations that would underflow in natural
//! scale (tail masses, density ratios far from the bulk) are carried in log
//! space throughout.

pub mod chain;
pub mod density;
pub mod metrics;
pub mod params;
pub mod quad;
pub mod special;
pub mod stein;

pub use chain::StationaryDistribution;
pub use density::{DensityKind, PiecewiseLogDensity};
pub use metrics::ComparisonReport;
pub use params::{DerivedParams, ParamError, SystemParams};
pub use quad::QuadConfig;
pub use stein::{SteinSolution, TestFunction};
