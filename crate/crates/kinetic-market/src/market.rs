//! Return estimation, strategy weighting, feedback control and running cost.
//!
//! This is the pure formula layer shared by every solver in the crate. An
//! investor splits wealth between a stock portfolio `x` and a bond portfolio
//! `y`, estimates the excess return of stocks over bonds,
//!
//! ```text
//! K = chi * K_f + (1 - chi) * K_c
//! K_f = U_gamma(omega * (s_f - S) / S) - r        (mean reversion to s_f)
//! K_c = U_gamma((S_dot / rho + D) / S) - r        (trend extrapolation)
//! ```
//!
//! and moves capital at the rate given by the one-step-lookahead minimizer of
//! the expected missed-revenue cost. In the many-agent limit the transfer
//! rate from bonds into stocks is
//!
//! ```text
//!          (K / nu) * x   if K < 0
//! u*  =    0              if K = 0
//!          (K / nu) * y   if K > 0
//! ```
//!
//! with a finite-population correction [`feedback_control_finite_n`] that
//! converges to `u*` at rate 1/N. All functions here are stateless and safe
//! to call from any number of threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregate estimates below this magnitude (in 1/time units) take the
/// zero-control branch. Exact-zero comparison on floats would be meaningless.
pub const K_ZERO_TOL: f64 = 1e-12;

/// Shape of the value function applied to raw return estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueFunctionMode {
    /// Piecewise power law: `v^(gamma+0.05)` for gains, `-|v|^(gamma-0.05)`
    /// for losses. Concave for gains, convex and steeper for losses.
    #[default]
    KahnemanTversky,
    /// Pass-through; used by the closed-form steady-state analysis.
    Identity,
}

/// All model constants. Units are noted per field; `wealth` is the monetary
/// unit of the portfolios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Market depth kappa, 1/(wealth*time). Scales how strongly excess
    /// demand moves the price.
    pub kappa: f64,
    /// Transaction-cost scale nu (time). Larger nu means slower trading.
    pub nu: f64,
    /// Risk-free interest rate r, 1/time.
    pub r: f64,
    /// Dividend D, wealth/time.
    pub dividend: f64,
    /// Exchange-rate frequency rho (dimensionless scaling of the observed
    /// price trend).
    pub rho: f64,
    /// Expected mean-reversion speed omega towards the fundamental price,
    /// 1/time.
    pub omega: f64,
    /// Risk tolerance gamma in [0.05, 0.95], so both exponents
    /// gamma +- 0.05 lie in (0, 1].
    pub gamma: f64,
    /// Weight-function scale alpha > 0 (units of a return rate).
    pub alpha: f64,
    /// Trust coefficient beta in [0, 1]: 1 trusts the higher estimate,
    /// 0 the lower one.
    pub beta: f64,
    /// Time step, time.
    pub dt: f64,
    /// Simulation horizon, time.
    pub t_end: f64,
    /// Fixed strategy weight; `None` computes chi from the weight function.
    pub chi_override: Option<f64>,
    /// Value function applied to raw return estimates.
    pub value_fn: ValueFunctionMode,
}

impl MarketParams {
    /// Check every range constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool, &'static str); 10] = [
            ("kappa", self.kappa, self.kappa > 0.0, "must be > 0"),
            ("nu", self.nu, self.nu > 0.0, "must be > 0"),
            ("r", self.r, self.r >= 0.0, "must be >= 0"),
            ("dividend", self.dividend, self.dividend >= 0.0, "must be >= 0"),
            ("rho", self.rho, self.rho > 0.0, "must be > 0"),
            ("omega", self.omega, self.omega > 0.0, "must be > 0"),
            (
                "gamma",
                self.gamma,
                (0.05..=0.95).contains(&self.gamma),
                "must lie in [0.05, 0.95]",
            ),
            ("alpha", self.alpha, self.alpha > 0.0, "must be > 0"),
            (
                "beta",
                self.beta,
                (0.0..=1.0).contains(&self.beta),
                "must lie in [0, 1]",
            ),
            ("dt", self.dt, self.dt > 0.0, "must be > 0"),
        ];
        for (name, value, ok, constraint) in checks {
            if !value.is_finite() || !ok {
                return Err(Error::InvalidParameter { name, value, constraint });
            }
        }
        if let Some(chi) = self.chi_override {
            if !(0.0..=1.0).contains(&chi) {
                return Err(Error::InvalidParameter {
                    name: "chi_override",
                    value: chi,
                    constraint: "must lie in [0, 1]",
                });
            }
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                constraint: "must be > 0",
            });
        }
        Ok(())
    }
}

/// One investor's portfolio: wealth held in stock and in bonds. Both stay
/// non-negative for all time (no debts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Wealth invested in the risky stock (paper-money value, not shares).
    pub stock: f64,
    /// Wealth invested in the risk-free bond.
    pub bond: f64,
}

impl AgentState {
    pub fn new(stock: f64, bond: f64) -> Self {
        Self { stock, bond }
    }

    /// Total wealth `x + y`.
    pub fn total(&self) -> f64 {
        self.stock + self.bond
    }
}

/// Macroscopic market snapshot at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Stock price S > 0.
    pub price: f64,
    /// Current excess demand (mean transfer rate), wealth/time. Carried from
    /// the previous step so the trend estimate has a price rate to look at.
    pub excess_demand: f64,
    /// Fundamental price s_f > 0.
    pub fundamental: f64,
    /// Simulation time.
    pub time: f64,
}

impl MarketState {
    pub fn new(price: f64, fundamental: f64) -> Self {
        Self { price, excess_demand: 0.0, fundamental, time: 0.0 }
    }

    /// Price rate implied by the relaxed market-clearing law,
    /// `S_dot = kappa * ED * S`.
    pub fn price_rate(&self, kappa: f64) -> f64 {
        kappa * self.excess_demand * self.price
    }
}

/// The two return estimates, their weight and the aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnEstimates {
    /// Mean-reversion (fundamentalist) estimate K_f, 1/time.
    pub fundamentalist: f64,
    /// Trend-following (chartist) estimate K_c, 1/time.
    pub chartist: f64,
    /// Convex weight chi in [0, 1] put on the fundamentalist estimate.
    pub weight: f64,
    /// Aggregate K = chi*K_f + (1-chi)*K_c.
    pub aggregate: f64,
}

/// Value function `U_gamma` mapping a raw return estimate to its perceived
/// value. The reference point is zero: `U(0) = 0`, and in the
/// Kahneman-Tversky mode losses are weighted more steeply than gains
/// (exponent `gamma - 0.05` against `gamma + 0.05`).
pub fn value_function(v: f64, gamma: f64, mode: ValueFunctionMode) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite { context: "value_function argument" });
    }
    match mode {
        ValueFunctionMode::Identity => Ok(v),
        ValueFunctionMode::KahnemanTversky => {
            if v > 0.0 {
                Ok(v.powf(gamma + 0.05))
            } else {
                Ok(-(v.abs().powf(gamma - 0.05)))
            }
        }
    }
}

/// Strategy weight `chi = W(K_f - K_c)`:
///
/// ```text
/// W(d) = beta * (tanh(d/alpha)/2 + 1/2) + (1-beta) * (tanh(-d/alpha)/2 + 1/2)
/// ```
///
/// Always in [0, 1] and exactly 1/2 at `d = 0`. With `beta = 1` the investor
/// optimistically trusts whichever estimate is higher, with `beta = 0` the
/// lower one.
pub fn weight_function(diff: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !diff.is_finite() {
        return Err(Error::NonFinite { context: "weight_function argument" });
    }
    let s = (diff / alpha).tanh();
    Ok(beta * (0.5 * s + 0.5) + (1.0 - beta) * (-0.5 * s + 0.5))
}

/// Fundamentalist return estimate `K_f = U_gamma(omega*(s_f - S)/S) - r`.
pub fn fundamental_estimate(price: f64, fundamental: f64, p: &MarketParams) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::NonPositivePrice { price });
    }
    let v = p.omega * (fundamental - price) / price;
    Ok(value_function(v, p.gamma, p.value_fn)? - p.r)
}

/// Chartist return estimate `K_c = U_gamma((S_dot/rho + D)/S) - r`.
///
/// Callers that track the market through [`MarketState`] supply
/// `price_rate = kappa * ED * S`, substituting the market-clearing law for
/// the observed trend.
pub fn chartist_estimate(price: f64, price_rate: f64, p: &MarketParams) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::NonPositivePrice { price });
    }
    let v = (price_rate / p.rho + p.dividend) / price;
    Ok(value_function(v, p.gamma, p.value_fn)? - p.r)
}

/// Both estimates, the weight and the aggregate `K` at the given market
/// state. The price trend fed to the chartist side is
/// `S_dot = kappa * ED * S` with the excess demand carried in `state`.
pub fn aggregate_estimate(state: &MarketState, p: &MarketParams) -> Result<ReturnEstimates> {
    let kf = fundamental_estimate(state.price, state.fundamental, p)?;
    let kc = chartist_estimate(state.price, state.price_rate(p.kappa), p)?;
    let chi = match p.chi_override {
        Some(chi) => chi,
        None => weight_function(kf - kc, p.alpha, p.beta)?,
    };
    Ok(ReturnEstimates {
        fundamentalist: kf,
        chartist: kc,
        weight: chi,
        aggregate: chi * kf + (1.0 - chi) * kc,
    })
}

/// Mean-field feedback control: the transfer rate (wealth/time) from bonds
/// into stocks that a single agent applies given the aggregate estimate.
/// Positive `u*` buys stocks, negative sells them; the referenced portfolio
/// is the one the agent would leave.
pub fn feedback_control(agent: &AgentState, k: f64, nu: f64) -> f64 {
    if k.abs() < K_ZERO_TOL {
        0.0
    } else if k < 0.0 {
        (k / nu) * agent.stock
    } else {
        (k / nu) * agent.bond
    }
}

/// Finite-population feedback control `u_N*`. Relative to the mean-field
/// law it keeps the 1/N terms through which one agent's trade moves the
/// price against itself:
///
/// ```text
/// K > 0:  (1/nu) * (K y - (kappa/N) S K_S y^2 / 2)
/// K < 0:  (1/nu) * (K x + K (kappa/N) x^2 + (kappa/N) S K_S x^2 / 2)
/// ```
///
/// where `K_S` is the price sensitivity of the estimate (see
/// [`estimate_dk_ds`]). The two branches carry the correction with opposite
/// sign structure; they are implemented exactly as derived. Converges to
/// [`feedback_control`] as N grows, at rate 1/N.
pub fn feedback_control_finite_n(
    agent: &AgentState,
    k: f64,
    dk_ds: f64,
    price: f64,
    n_agents: usize,
    p: &MarketParams,
) -> f64 {
    if k.abs() < K_ZERO_TOL {
        return 0.0;
    }
    let n = n_agents as f64;
    if k > 0.0 {
        let y = agent.bond;
        (1.0 / p.nu) * (k * y - (p.kappa / n) * price * dk_ds * y * y / 2.0)
    } else {
        let x = agent.stock;
        (1.0 / p.nu) * (k * x + k * (p.kappa / n) * x * x + (p.kappa / n) * price * dk_ds * x * x / 2.0)
    }
}

/// Price sensitivity `dK/dS` of the aggregate estimate, holding the excess
/// demand fixed (the trend input `S_dot = kappa*ED*S` is re-evaluated at the
/// shifted price, matching the substitution used to derive `u_N*`).
///
/// Uses a central difference with `h = 1e-6 * S` unless `h` is given; for
/// the identity value function with `chi_override = 1` the exact derivative
/// `-omega * s_f / S^2` is returned instead.
pub fn estimate_dk_ds(state: &MarketState, p: &MarketParams, h: Option<f64>) -> Result<f64> {
    if !(state.price > 0.0) {
        return Err(Error::NonPositivePrice { price: state.price });
    }
    if p.value_fn == ValueFunctionMode::Identity && p.chi_override == Some(1.0) {
        return Ok(-p.omega * state.fundamental / (state.price * state.price));
    }
    let h = h.unwrap_or(1e-6 * state.price);
    if !(h > 0.0) || state.price - h <= 0.0 {
        return Err(Error::NonPositivePrice { price: state.price - h });
    }
    let shifted = |price: f64| MarketState { price, ..*state };
    let hi = aggregate_estimate(&shifted(state.price + h), p)?.aggregate;
    let lo = aggregate_estimate(&shifted(state.price - h), p)?.aggregate;
    Ok((hi - lo) / (2.0 * h))
}

/// Running cost Psi (wealth^2/time): the expected missed revenue of sitting
/// in the wrong portfolio, weighted by the wealth parked there.
pub fn running_cost(agent: &AgentState, k: f64) -> f64 {
    if k.abs() < K_ZERO_TOL {
        0.0
    } else if k < 0.0 {
        k.abs() * agent.stock * agent.stock / 2.0
    } else {
        k.abs() * agent.bond * agent.bond / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn params() -> MarketParams {
        MarketParams {
            kappa: 0.4,
            nu: 5.0,
            r: 0.01,
            dividend: 0.01,
            rho: 2.0 / 3.0,
            omega: 20.0,
            gamma: 0.55,
            alpha: 0.5,
            beta: 0.65,
            dt: 1e-4,
            t_end: 0.6,
            chi_override: None,
            value_fn: ValueFunctionMode::KahnemanTversky,
        }
    }

    #[test]
    fn value_function_reference_points() {
        let kt = ValueFunctionMode::KahnemanTversky;
        assert_eq!(value_function(1.0, 0.55, kt).unwrap(), 1.0);
        assert_eq!(value_function(0.0, 0.55, kt).unwrap(), 0.0);
        // 4^0.6 and -4^0.5, evaluated independently.
        assert_relative_eq!(
            value_function(4.0, 0.55, kt).unwrap(),
            2.2973967099940698,
            max_relative = 1e-14
        );
        assert_relative_eq!(value_function(-4.0, 0.55, kt).unwrap(), -2.0, max_relative = 1e-14);
        assert_eq!(value_function(7.25, 0.4, ValueFunctionMode::Identity).unwrap(), 7.25);
        assert!(value_function(f64::NAN, 0.5, kt).is_err());
    }

    #[test]
    fn weight_function_examples() {
        assert_eq!(weight_function(0.0, 0.5, 0.65).unwrap(), 0.5);
        // Saturation: with beta = 1 the weight converges to 1.
        assert_relative_eq!(weight_function(1e9, 0.5, 1.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            weight_function(0.5, 0.5, 0.65).unwrap(),
            0.6142391233933647,
            max_relative = 1e-14
        );
    }

    #[test]
    fn fundamental_estimate_examples() {
        let mut p = params();
        let mut state = MarketState::new(5.0, 10.0);

        // At S = s_f the deviation is zero and K_f = -r.
        state.price = 10.0;
        assert_relative_eq!(
            fundamental_estimate(state.price, state.fundamental, &p).unwrap(),
            -p.r
        );

        state.price = 5.0;
        p.value_fn = ValueFunctionMode::Identity;
        assert_relative_eq!(
            fundamental_estimate(5.0, 10.0, &p).unwrap(),
            19.99,
            max_relative = 1e-14
        );

        // 20^0.4 - 0.01 with gamma = 0.35.
        p.value_fn = ValueFunctionMode::KahnemanTversky;
        p.gamma = 0.35;
        assert_relative_eq!(
            fundamental_estimate(5.0, 10.0, &p).unwrap(),
            3.3044540173399874,
            max_relative = 1e-14
        );

        assert!(fundamental_estimate(0.0, 10.0, &p).is_err());
        assert!(fundamental_estimate(-1.0, 10.0, &p).is_err());
    }

    #[test]
    fn chartist_estimate_examples() {
        let mut p = params();
        // Zero return, zero dividend: K_c = -r.
        p.dividend = 0.0;
        assert_relative_eq!(chartist_estimate(5.0, 0.0, &p).unwrap(), -0.01);

        let mut p = params();
        p.value_fn = ValueFunctionMode::Identity;
        // (0.2/(2/3) + 0.01)/5 - 0.01 = 0.052.
        assert_relative_eq!(
            chartist_estimate(5.0, 0.2, &p).unwrap(),
            0.052,
            max_relative = 1e-13
        );

        // Same trend through the market-clearing substitution: kappa*ED*S =
        // 0.4*0.1*5 = 0.2, now through the value function.
        let p = params();
        let state = MarketState { price: 5.0, excess_demand: 0.1, fundamental: 10.0, time: 0.0 };
        // 0.062^0.6 - 0.01
        assert_relative_eq!(
            chartist_estimate(state.price, state.price_rate(p.kappa), &p).unwrap(),
            0.17855368032744368,
            max_relative = 1e-13
        );
    }

    #[test]
    fn aggregate_estimate_composition() {
        let mut p = params();
        let state = MarketState { price: 5.0, excess_demand: 0.1, fundamental: 10.0, time: 0.0 };

        p.chi_override = Some(1.0);
        let est = aggregate_estimate(&state, &p).unwrap();
        assert_eq!(est.aggregate, est.fundamentalist);

        p.chi_override = Some(0.0);
        let est = aggregate_estimate(&state, &p).unwrap();
        assert_eq!(est.aggregate, est.chartist);

        // Saturated weight composition: kf = 19.99, kc = 0.052 under the
        // identity value function; tanh saturates so chi = beta = 0.65 and
        // k = 0.65*19.99 + 0.35*0.052 = 13.0117.
        p.chi_override = None;
        p.value_fn = ValueFunctionMode::Identity;
        let est = aggregate_estimate(&state, &p).unwrap();
        assert_relative_eq!(est.fundamentalist, 19.99, max_relative = 1e-13);
        assert_relative_eq!(est.chartist, 0.052, max_relative = 1e-12);
        assert_relative_eq!(est.weight, 0.65, max_relative = 1e-12);
        assert_relative_eq!(est.aggregate, 13.0117, max_relative = 1e-12);
    }

    #[test]
    fn feedback_control_branches() {
        let agent = AgentState::new(20.0, 20.0);
        assert_eq!(feedback_control(&agent, 0.0, 5.0), 0.0);
        assert_eq!(feedback_control(&agent, 1e-15, 5.0), 0.0);
        assert_relative_eq!(feedback_control(&agent, 19.99, 5.0), 79.96, max_relative = 1e-14);
        assert_relative_eq!(feedback_control(&agent, -0.5, 5.0), -2.0, max_relative = 1e-14);
    }

    #[test]
    fn finite_n_control_examples() {
        let p = params();
        let agent = AgentState::new(20.0, 20.0);
        // (1/5)(1*20 - (0.4/10)*5*(-0.8)*200) = 10.4
        let u = feedback_control_finite_n(&agent, 1.0, -0.8, 5.0, 10, &p);
        assert_relative_eq!(u, 10.4, max_relative = 1e-13);
        assert_eq!(feedback_control_finite_n(&agent, 0.0, -0.8, 5.0, 10, &p), 0.0);
    }

    #[test]
    fn finite_n_converges_at_rate_one_over_n() {
        let p = params();
        let agent = AgentState::new(17.0, 23.0);
        let (k, dk_ds, s) = (0.8, -0.6, 5.0);
        let u_star = feedback_control(&agent, k, p.nu);
        // |u_N - u*| halves when N doubles: log-log slope -1.
        let mut prev_gap = f64::NAN;
        for n in [10usize, 20, 40, 80, 160] {
            let gap = (feedback_control_finite_n(&agent, k, dk_ds, s, n, &p) - u_star).abs();
            if prev_gap.is_finite() {
                assert_relative_eq!(prev_gap / gap, 2.0, max_relative = 1e-10);
            }
            prev_gap = gap;
        }
    }

    #[test]
    fn dk_ds_analytic_branch() {
        let mut p = params();
        p.value_fn = ValueFunctionMode::Identity;
        p.chi_override = Some(1.0);
        let state = MarketState::new(5.0, 10.0);
        assert_relative_eq!(estimate_dk_ds(&state, &p, None).unwrap(), -8.0, max_relative = 1e-14);
    }

    #[test]
    fn dk_ds_finite_difference_matches_analytic() {
        // Richardson-style check: the central difference of the pure
        // fundamentalist aggregate matches -omega*s_f/S^2 to O(h^2), for
        // both value-function modes where the argument stays positive.
        let mut p = params();
        p.chi_override = Some(1.0);
        let state = MarketState::new(5.0, 10.0);

        p.value_fn = ValueFunctionMode::Identity;
        // Route through the finite difference by lifting the analytic
        // shortcut: gamma != identity/chi=1 combo is required, so compare
        // formula vs a hand-rolled difference here.
        let fd = {
            let h = 1e-5;
            let shifted = |price: f64| MarketState { price, ..state };
            let hi = aggregate_estimate(&shifted(5.0 + h), &p).unwrap().aggregate;
            let lo = aggregate_estimate(&shifted(5.0 - h), &p).unwrap().aggregate;
            (hi - lo) / (2.0 * h)
        };
        assert_relative_eq!(fd, -8.0, max_relative = 1e-8);

        // Kahneman-Tversky mode: compare against the chain rule
        // d/dS U(omega*(sf-S)/S) = U'(v) * (-omega*sf/S^2).
        p.value_fn = ValueFunctionMode::KahnemanTversky;
        let v: f64 = 20.0 * (10.0 - 5.0) / 10.0 / 0.5; // omega*(sf-S)/S = 20
        let exponent = p.gamma + 0.05;
        let chain = exponent * v.powf(exponent - 1.0) * (-p.omega * 10.0 / 25.0);
        let fd = estimate_dk_ds(&state, &p, Some(1e-4)).unwrap();
        assert_relative_eq!(fd, chain, max_relative = 1e-6);
    }

    #[test]
    fn running_cost_examples() {
        let agent = AgentState::new(20.0, 3.0);
        assert_eq!(running_cost(&agent, 0.0), 0.0);
        assert_relative_eq!(running_cost(&agent, -0.5), 100.0);
        assert_relative_eq!(running_cost(&agent, 2.0), 9.0);
    }

    #[test]
    fn params_validation_names_field() {
        let mut p = params();
        p.gamma = 0.99;
        match p.validate() {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "gamma"),
            other => panic!("expected InvalidParameter, got {other:?}"),
        }
        let mut p = params();
        p.kappa = -1.0;
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }

    proptest! {
        #[test]
        fn weight_stays_in_unit_interval(
            diff in -1e6f64..1e6,
            alpha in 1e-3f64..1e3,
            beta in 0.0f64..=1.0,
        ) {
            let w = weight_function(diff, alpha, beta).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn value_function_sign_and_loss_aversion(
            v in 1e-6f64..1.0,
            gamma in 0.05f64..=0.95,
        ) {
            let kt = ValueFunctionMode::KahnemanTversky;
            let gain = value_function(v, gamma, kt).unwrap();
            let loss = value_function(-v, gamma, kt).unwrap();
            prop_assert!(gain > 0.0 && loss < 0.0);
            // On (0,1) the loss branch exponent gamma-0.05 < gamma+0.05
            // makes losses at least as steep as gains.
            prop_assert!(loss.abs() >= gain - 1e-15);
        }

        #[test]
        fn aggregate_between_estimates(
            price in 0.5f64..50.0,
            ed in -5.0f64..5.0,
            sf in 0.5f64..50.0,
            chi in proptest::option::of(0.0f64..=1.0),
        ) {
            let mut p = params();
            p.chi_override = chi;
            let state = MarketState { price, excess_demand: ed, fundamental: sf, time: 0.0 };
            let est = aggregate_estimate(&state, &p).unwrap();
            let lo = est.fundamentalist.min(est.chartist) - 1e-12;
            let hi = est.fundamentalist.max(est.chartist) + 1e-12;
            prop_assert!(est.aggregate >= lo && est.aggregate <= hi);
        }

        #[test]
        fn control_pushes_toward_favored_asset(
            x in 1e-3f64..1e3,
            y in 1e-3f64..1e3,
            k in -10.0f64..10.0,
        ) {
            let agent = AgentState::new(x, y);
            let u = feedback_control(&agent, k, 5.0);
            prop_assert!(u * k >= 0.0);
            prop_assert!(running_cost(&agent, k) >= 0.0);
        }
    }
}
