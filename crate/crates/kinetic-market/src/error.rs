//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong in a simulation, an oracle evaluation or a
/// statistics routine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite argument: {context}")]
    NonFinite { context: &'static str },

    #[error("non-positive price: S = {price}")]
    NonPositivePrice { price: f64 },

    #[error("parameter out of range: {name} = {value} ({constraint})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("price collapsed at t = {time}; reduce dt")]
    PriceCollapsed { time: f64 },

    #[error("portfolio state collapsed at t = {time}; reduce dt")]
    StateCollapsed { time: f64 },

    #[error("empty population")]
    EmptyPopulation,

    #[error("empty broker ensemble")]
    EmptyEnsemble,

    #[error("regime switch at t = {time}; split interval")]
    RegimeSwitch { time: f64 },

    #[error("invalid steady-state parameters: shape = {shape}")]
    InvalidSteadyState { shape: f64 },

    #[error("time {time} outside recorded history [{start}, {end}]")]
    OutOfHistory { time: f64, start: f64, end: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("non-positive sample {value} not allowed here")]
    NonPositiveSample { value: f64 },

    #[error("degenerate variance")]
    DegenerateVariance,

    #[error("tail sample count k = {k} out of range (need 10 <= k < n = {n})")]
    InvalidTailCount { k: usize, n: usize },

    #[error("path of length {len} too short (need > {need})")]
    PathTooShort { len: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("fixed point for excess demand did not converge")]
    FixedPointDiverged,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
