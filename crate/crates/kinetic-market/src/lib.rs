//! Kinetic Monte Carlo simulation of a stock/bond market whose investors
//! derive their trading rule from one-step-lookahead optimal control.
//!
//! The model couples three layers:
//!
//! 1. **Portfolio layer** — N investors each hold wealth `x` in a stock and
//!    `y` in a bond and shift capital at the feedback rate `u*` obtained by
//!    minimizing expected missed revenue plus quadratic transaction costs
//!    ([`market`]). Simulated either as a finite agent system ([`micro`]) or
//!    as a particle approximation of the population density through pairwise
//!    independent kinetic interactions ([`kinetic`]).
//! 2. **Price layer** — the macroscopic price follows the relaxed
//!    market-clearing law `S_dot = kappa * ED * S`; optionally an ensemble
//!    of M brokers carries microscopic prices with multiplicative noise
//!    whose average is the macroscopic price ([`broker`]).
//! 3. **Verification layer** — closed-form densities (log-normal wealth
//!    marginals, log-normal long-term price law, inverse-gamma
//!    high-frequency steady state) and moment ODEs serve as ground truth
//!    ([`oracles`]), with empirical statistics to compare against
//!    ([`analytics`]).
//!
//! Scenario orchestration, presets and CSV output live in [`scenario`]; the
//! acceptance checks wired to the `verify` CLI subcommand live in
//! [`verify`]. See the `examples/` directory for one runnable program per
//! capability.

pub mod analytics;
pub mod broker;
pub mod error;
pub mod kinetic;
pub mod market;
pub mod micro;
pub mod oracles;
pub mod rng;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
pub use market::{AgentState, MarketParams, MarketState, ReturnEstimates, ValueFunctionMode};
