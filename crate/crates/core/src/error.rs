//! Error types, one enum per subsystem.

use thiserror::Error;

use crate::quarter::QuarterId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),
    #[error("state spaces differ: {left:?} vs {right:?}")]
    StateSpaceMismatch { left: Vec<String>, right: Vec<String> },
    #[error("period mismatch: expected {expected}, found {found}")]
    PeriodMismatch { expected: QuarterId, found: QuarterId },
    #[error("empty matrix chain")]
    EmptyChain,
    #[error("bad quarter {0:?}, expected YYYYQn")]
    BadQuarter(String),
    #[error("bad quarter window {0:?}, expected START:END")]
    BadWindow(String),
    #[error("expected {expected} values, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("entry {index} = {value} outside [0, 1]")]
    EntryOutOfRange { index: usize, value: f64 },
    #[error("shares sum to {sum}, not 1")]
    SharesNotNormalized { sum: f64 },
    #[error("row {row} sums to {sum}, not 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("malformed table: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: unknown state label {label:?}")]
    BadStateLabel { row: usize, label: String },
    #[error("row {row}: weight {weight} is not positive")]
    NonPositiveWeight { row: usize, weight: String },
    #[error("row {row}: bad quarter {value:?}")]
    BadQuarterFormat { row: usize, value: String },
    #[error("row {row}: bad value {value:?} in column {column}")]
    BadField { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} fields, got {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("person {person} observed twice in {period}")]
    DuplicateObservation { person: String, period: QuarterId },
    #[error("bad filter expression {0:?}")]
    BadFilter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("no observations in {0}")]
    EmptyQuarter(QuarterId),
    #[error("window {window} not covered by data spanning {span}")]
    WindowNotCovered { window: String, span: String },
    #[error("linkage failed: {0}")]
    Linkage(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArimaError {
    #[error("series of length {len} too short for {spec} (need {needed})")]
    SeriesTooShort { spec: String, len: usize, needed: usize },
    #[error("optimizer did not converge for {0}")]
    NonConvergence(String),
    #[error("no model on the grid could be fitted")]
    AllFitsFailed,
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("series contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("cannot resample an empty sample")]
    EmptySample,
    #[error("need at least {needed} finite replicates, got {found}")]
    TooFewReplicates { needed: usize, found: usize },
    #[error("{failed} of {total} replicates failed (limit 5%); first error: {first}")]
    TooManyFailedReplicates { failed: usize, total: usize, first: String },
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum CarimaError {
    #[error("invalid intervention setup: {0}")]
    InvalidSpec(String),
    #[error("no estimated matrix for {0}")]
    MissingQuarter(QuarterId),
    #[error("cell ({from},{to}): {source}")]
    CellFit {
        from: String,
        to: String,
        #[source]
        source: ArimaError,
    },
    #[error("t* shift of {0} quarters exceeds the limit of 1")]
    ShiftTooLarge(i64),
    #[error("population must be positive, got {0}")]
    BadPopulation(f64),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("chain is not irreducible: the stationary distribution is not unique")]
    NotIrreducible,
    #[error("chain is periodic with period {0}")]
    NotAperiodic(usize),
    #[error("expected a 3-state chain, got {0} states")]
    NotThreeStates(usize),
    #[error("closed form {closed} disagrees with stationary solve {numeric}")]
    ClosedFormMismatch { closed: f64, numeric: f64 },
    #[error("linear solve and power iteration disagree by {0:e}")]
    SolverDisagreement(f64),
    #[error("perturbation {delta} leaves the T row invalid")]
    InvalidPerturbation { delta: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world configuration: {0}")]
    ConfigInvalid(String),
    #[error("horizon {t_star}+{horizon} outside simulated span ending {last}")]
    HorizonOutOfRange { t_star: QuarterId, horizon: usize, last: QuarterId },
    #[error(transparent)]
    Flow(#[from] FlowError),
}
