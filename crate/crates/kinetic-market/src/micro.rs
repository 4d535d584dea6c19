//! Finite-population dynamics: N investors coupled through the macroscopic
//! price ODE `S_dot = kappa * ED * S`.
//!
//! Each step evaluates the return estimates at the pre-step state (the
//! carried excess demand supplies the trend input), computes every agent's
//! feedback control, reduces them to this step's excess demand, and then
//! advances agents and price with an explicit Euler (deterministic) or
//! Euler-Maruyama (noisy) update. Agent updates run in parallel; the demand
//! reduction and the price update are sequential so results are independent
//! of the thread count.
//!
//! If an update would push a portfolio negative, the transfer is clipped so
//! the constrained side lands exactly at zero (the clip preserves the
//! agent's wealth budget) and the event is counted.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::broker::FundamentalProcess;
use crate::error::{Error, Result};
use crate::market::{self, AgentState, MarketParams, MarketState, ReturnEstimates, K_ZERO_TOL};
use crate::oracles::DriftHistory;
use crate::rng::{agent_stream, init_stream};

/// Which feedback law the agents apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLaw {
    /// Mean-field control `u* = (K/nu) * (x or y)`.
    #[default]
    MeanField,
    /// Finite-population control with the 1/N price-impact terms.
    FiniteN,
}

/// Deterministic or noisy stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Deterministic,
    Noisy,
}

/// N agents with one independent random stream each, derived from
/// `(master_seed, agent index)` so parallel execution is reproducible.
#[derive(Debug, Clone)]
pub struct Population {
    agents: Vec<AgentState>,
    rngs: Vec<ChaCha8Rng>,
}

impl Population {
    /// All agents start at the same portfolio `(stock0, bond0)`.
    pub fn point_mass(n: usize, stock0: f64, bond0: f64, master_seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        if !(stock0 >= 0.0) || !(bond0 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "initial portfolio",
                value: stock0.min(bond0),
                constraint: "must be >= 0",
            });
        }
        Ok(Self::with_streams(vec![AgentState::new(stock0, bond0); n], master_seed))
    }

    /// Log-normal initial cloud: `ln x ~ N(ln x0 - sigma^2/2, sigma^2)` so
    /// the mean stays at `x0`, and likewise for bonds.
    pub fn lognormal_cloud(
        n: usize,
        stock0: f64,
        bond0: f64,
        sigma: f64,
        master_seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        let mut rng = init_stream(master_seed);
        let agents = (0..n)
            .map(|_| {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                AgentState::new(
                    stock0 * (sigma * zx - sigma * sigma / 2.0).exp(),
                    bond0 * (sigma * zy - sigma * sigma / 2.0).exp(),
                )
            })
            .collect();
        Ok(Self::with_streams(agents, master_seed))
    }

    pub fn from_agents(agents: Vec<AgentState>, master_seed: u64) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        Ok(Self::with_streams(agents, master_seed))
    }

    fn with_streams(agents: Vec<AgentState>, master_seed: u64) -> Self {
        let rngs = (0..agents.len()).map(|i| agent_stream(master_seed, i)).collect();
        Self { agents, rngs }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    /// Population means `(X, Y)`; summed sequentially so the result does
    /// not depend on the thread count.
    pub fn means(&self) -> (f64, f64) {
        let n = self.agents.len() as f64;
        let (sx, sy) = self
            .agents
            .iter()
            .fold((0.0, 0.0), |(sx, sy), a| (sx + a.stock, sy + a.bond));
        (sx / n, sy / n)
    }

    /// Smallest stock and bond holdings across the population.
    pub fn min_holdings(&self) -> (f64, f64) {
        self.agents.iter().fold((f64::INFINITY, f64::INFINITY), |(mx, my), a| {
            (mx.min(a.stock), my.min(a.bond))
        })
    }
}

/// Empirical excess demand: the arithmetic mean of the agents' transfer
/// rates.
pub fn excess_demand_empirical(controls: &[f64]) -> Result<f64> {
    if controls.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    Ok(controls.iter().sum::<f64>() / controls.len() as f64)
}

/// What one step used and did.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Return estimates evaluated at the pre-step state.
    pub estimates: ReturnEstimates,
    /// This step's empirical excess demand.
    pub excess_demand: f64,
    /// Number of positivity clips applied.
    pub clips: u64,
}

fn step(
    pop: &mut Population,
    market: &mut MarketState,
    p: &MarketParams,
    law: ControlLaw,
    noisy: bool,
) -> Result<StepInfo> {
    let estimates = market::aggregate_estimate(market, p)?;
    let k = estimates.aggregate;
    let dk_ds = match law {
        ControlLaw::MeanField => 0.0,
        ControlLaw::FiniteN => market::estimate_dk_ds(market, p, None)?,
    };
    let n = pop.len();

    let mut controls = Vec::with_capacity(n);
    pop.agents
        .par_iter()
        .map(|agent| match law {
            ControlLaw::MeanField => market::feedback_control(agent, k, p.nu),
            ControlLaw::FiniteN => {
                market::feedback_control_finite_n(agent, k, dk_ds, market.price, n, p)
            }
        })
        .collect_into_vec(&mut controls);
    let ed = excess_demand_empirical(&controls)?;

    let dt = p.dt;
    let price = market.price;
    let time = market.time;
    let noise_on = noisy && k.abs() >= K_ZERO_TOL;
    let clips: u64 = pop
        .agents
        .par_iter_mut()
        .zip(pop.rngs.par_iter_mut())
        .zip(controls.par_iter())
        .map(|((agent, rng), &u)| {
            // Own-portfolio drifts and the (possibly noisy) transfer.
            let drift_stock = dt * (p.kappa * ed + p.dividend / price) * agent.stock;
            let drift_bond = dt * p.r * agent.bond;
            let mut transfer = dt * u;
            if noise_on {
                let amplitude = if k < 0.0 { agent.stock } else { agent.bond } / p.nu;
                let eta: f64 = rng.sample(StandardNormal);
                transfer += dt.sqrt() * amplitude * eta;
            }

            let mut clipped = 0u64;
            let mut stock = agent.stock + drift_stock + transfer;
            let mut bond = agent.bond + drift_bond - transfer;
            if stock < 0.0 {
                transfer = -(agent.stock + drift_stock);
                stock = 0.0;
                bond = agent.bond + drift_bond - transfer;
                clipped = 1;
            }
            if bond < 0.0 {
                transfer = agent.bond + drift_bond;
                bond = 0.0;
                stock = agent.stock + drift_stock + transfer;
                clipped = 1;
            }
            if stock < 0.0 || bond < 0.0 {
                // Both constraints active: the budget itself went negative.
                return Err(Error::StateCollapsed { time });
            }
            agent.stock = stock;
            agent.bond = bond;
            Ok(clipped)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;

    let new_price = price + dt * p.kappa * ed * price;
    if !(new_price > 0.0) {
        return Err(Error::PriceCollapsed { time });
    }
    market.price = new_price;
    market.excess_demand = ed;
    market.time = time + dt;

    Ok(StepInfo { estimates, excess_demand: ed, clips })
}

/// One explicit Euler step of the feedback-controlled system:
///
/// ```text
/// x += dt ((kappa ED + D/S) x + u)      y += dt (r y - u)
/// S += dt kappa ED S
/// ```
///
/// where `ED` is this step's empirical mean of the controls and the
/// estimates are evaluated at the pre-step state.
pub fn step_deterministic(
    pop: &mut Population,
    market: &mut MarketState,
    p: &MarketParams,
    law: ControlLaw,
) -> Result<StepInfo> {
    step(pop, market, p, law, false)
}

/// Euler-Maruyama step: on top of [`step_deterministic`], each agent's
/// transfer gains `(1/nu) (H(-K)x + H(K)y) sqrt(dt) eta_i` drawn from the
/// agent's own stream. The noise moves wealth between the two portfolios
/// and never creates any; the price update carries no noise.
pub fn step_noisy(
    pop: &mut Population,
    market: &mut MarketState,
    p: &MarketParams,
    law: ControlLaw,
) -> Result<StepInfo> {
    step(pop, market, p, law, true)
}

/// Sampled paths of a run: price, excess demand and the population means of
/// the two portfolios.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub price: Vec<f64>,
    pub excess_demand: Vec<f64>,
    pub stock_mean: Vec<f64>,
    pub bond_mean: Vec<f64>,
    /// Fundamental price alongside each sample (constant unless the
    /// fundamental process is stochastic).
    pub fundamental: Vec<f64>,
}

impl Trajectory {
    pub fn record(&mut self, market: &MarketState, stock_mean: f64, bond_mean: f64) {
        self.times.push(market.time);
        self.price.push(market.price);
        self.excess_demand.push(market.excess_demand);
        self.stock_mean.push(stock_mean);
        self.bond_mean.push(bond_mean);
        self.fundamental.push(market.fundamental);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Drift integrands of the two marginal oracles, recorded on the step grid:
/// `b(t) = K/nu (kappa X + 1) + D/S` for the stock marginal and
/// `e(t) = r - K/nu` for the bond marginal.
#[derive(Debug, Clone, Default)]
pub struct MarginalDrifts {
    pub stock: DriftHistory,
    pub bond: DriftHistory,
}

impl MarginalDrifts {
    pub fn record(&mut self, t: f64, k: f64, stock_mean: f64, market: &MarketState, p: &MarketParams) {
        self.stock
            .push(t, (k / p.nu) * (p.kappa * stock_mean + 1.0) + p.dividend / market.price);
        self.bond.push(t, p.r - k / p.nu);
    }
}

/// Result of [`simulate`]. The population and market are left at their
/// final state by the caller-supplied references.
#[derive(Debug, Clone)]
pub struct MicroRun {
    pub trajectory: Trajectory,
    pub drifts: MarginalDrifts,
    /// Total positivity clips over the whole run.
    pub clips: u64,
}

/// Run the chosen stepper from `t = 0` to `t_end`, recording every
/// `sample_every`-th step plus the final state. Fully determined by
/// `(master seed, N, mode, params)` regardless of thread count.
pub fn simulate(
    pop: &mut Population,
    market: &mut MarketState,
    p: &MarketParams,
    mode: SimMode,
    law: ControlLaw,
    sf: &mut FundamentalProcess,
    sample_every: usize,
) -> Result<MicroRun> {
    p.validate()?;
    if p.t_end < p.dt {
        return Err(Error::InvalidParameter {
            name: "t_end",
            value: p.t_end,
            constraint: "must be >= dt",
        });
    }
    let n_steps = (p.t_end / p.dt).round().max(1.0) as usize;
    let sample_every = sample_every.max(1);

    let mut run = MicroRun {
        trajectory: Trajectory::default(),
        drifts: MarginalDrifts::default(),
        clips: 0,
    };

    for i in 0..n_steps {
        let t = i as f64 * p.dt;
        market.time = t;
        let (xbar, ybar) = pop.means();
        if i % sample_every == 0 {
            run.trajectory.record(market, xbar, ybar);
        }
        let before = *market;
        let info = match mode {
            SimMode::Deterministic => step_deterministic(pop, market, p, law),
            SimMode::Noisy => step_noisy(pop, market, p, law),
        }?;
        run.drifts.record(t, info.estimates.aggregate, xbar, &before, p);
        run.clips += info.clips;
        market.fundamental = sf.step(market.fundamental, p.dt)?;
    }

    // Close the drift histories and the trajectory at the final state.
    market.time = n_steps as f64 * p.dt;
    let (xbar, ybar) = pop.means();
    run.trajectory.record(market, xbar, ybar);
    let k_end = market::aggregate_estimate(market, p)?.aggregate;
    run.drifts.record(market.time, k_end, xbar, market, p);
    Ok(run)
}
