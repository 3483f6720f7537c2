//! Derivative asset analysis in a first-passage credit model where the
//! firm's asset value is only partially observable.
//!
//! Default is the first time the asset value `V` hits a threshold `K`.
//! Investors observe the default state, the dividend stream and a noisy
//! functional of `V`; prices of corporate securities are conditional
//! expectations under that coarser information set. The library
//!
//! * computes full-information claim values `h(t, v)` by a Crank-Nicolson
//!   backward solver with integral jump conditions at dividend dates
//!   ([`fullinfo`]),
//! * tracks the conditional (filter) density of `V` through a spline
//!   Galerkin discretization of the Zakai equation with boundary masses at
//!   the default threshold and at the domain truncation ([`galerkin`],
//!   [`basis`]),
//! * cross-checks the filter with a bootstrap particle filter for the
//!   stopped diffusion ([`particle`]),
//! * simulates joint paths of the truth and the filter ([`sim`]),
//! * prices debt claims and options on traded assets, computes gains-process
//!   quadratic variations and discrete regression hedges ([`pricing`]),
//! * backs the filter density out of market prices by a smoothness-penalized
//!   nonnegative quadratic program ([`calib`]).
//!
//! [`validate`] bundles the oracle-based checks behind the `validate` CLI
//! subcommand; the same checks run as the crate's acceptance test suite.

pub mod basis;
pub mod calib;
pub mod csvio;
pub mod error;
pub mod fullinfo;
pub mod galerkin;
pub mod model;
pub mod particle;
pub mod pricing;
pub mod qp;
pub mod sim;
pub mod validate;

pub use basis::Basis;
pub use calib::{calibrate_density, assemble_calibration, CalibrationProblem, Instrument};
pub use error::{Error, Result};
pub use fullinfo::{blackcox_survival, mc_dividend_value, solve_fullinfo, ClaimKind, ClaimSpec, FullInfoGrid};
pub use galerkin::{FilterState, GalerkinFilter, GalerkinMatrices};
pub use model::{DividendLaw, ModelParams, ReferenceDensity};
pub use particle::{run_particle_filter, ParticleCloud, ParticleRun};
pub use pricing::{
    hedge_discrete, instantaneous_quad_var, price_debt_claim, price_option_mc, HedgeConfig,
    HedgeReport, Instruments, OptionSpec,
};
pub use sim::{run_filter_path, simulate_truth, FilterPath, SimGrid, TruthPath};
