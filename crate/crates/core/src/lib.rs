//! Simulation and conditional least squares (CLS) inference for critical
//! continuous-state branching processes with immigration (CBI).
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the admissible parameter tuple `(c, β, b, ν, μ)`, the
//!   derived quantities (`b̃`, `β̃`, `ρ`, `β̄`, `C`, `V`, `V₀`), the branching and
//!   immigration mechanisms and the Laplace transform of the transition law.
//! * [`simulate`] draws unit-spaced skeletons `X₀, …, Xₙ` and functionals of
//!   the limit diffusion `d𝒴 = β̃ dt + √(C 𝒴⁺) d𝒲`.
//! * [`moments`] evaluates closed-form and recursive moments used as oracles.
//! * [`estimate`] computes the closed-form CLS estimator and its transform.
//! * [`harness`] runs Monte Carlo convergence experiments and writes reports.
//!
//! Jump measures are finite atomic mixtures, so every moment integral is an
//! exact finite sum and jump parts can be simulated as compound Poisson.

pub mod error;
pub mod estimate;
pub mod harness;
pub mod model;
pub mod moments;
pub mod numeric;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::{cls_rho_betabar, ClsEstimate, Regime};
pub use model::{derive, CbiParams, DerivedParams, JumpMeasure};
pub use simulate::{simulate_skeleton, SimConfig, Skeleton};
