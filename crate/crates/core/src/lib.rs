//! Labour-market flow estimation from rotating-panel survey data and
//! counterfactual evaluation of a universal policy intervention.
//!
//! The pipeline runs bottom-up:
//!
//! * [`panel`] parses person-quarter microdata and links consecutive
//!   quarters into transitions;
//! * [`estimator`] turns those into quarterly share vectors and
//!   row-stochastic transition matrices;
//! * [`arima`] fits small ARIMA models to each matrix-entry series;
//! * [`carima`] forecasts the matrices past the intervention date and
//!   compares fitted against counterfactual shares and cumulative
//!   transition probabilities, with [`bootstrap`] inference;
//! * [`equilibrium`] covers the stationary three-state analysis of how
//!   re-routing flows changes the unemployment stock;
//! * [`synth`] generates rotating-panel worlds with known truth.

pub mod arima;
pub mod bootstrap;
pub mod carima;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod flow;
pub mod panel;
pub mod quarter;
pub mod synth;

pub use error::{
    ArimaError, BootstrapError, CarimaError, EquilibriumError, EstimateError, FlowError, IngestError, SynthError,
};
pub use flow::{chain_product, matrix_difference, propagate, MatrixChain, ShareVector, StateSpace, TransitionMatrix};
pub use quarter::{QuarterId, QuarterWindow};
