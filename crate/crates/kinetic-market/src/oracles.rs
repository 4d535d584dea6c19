//! Closed-form reference solutions and moment equations.
//!
//! For sign-definite aggregate estimates the population density of wealth in
//! stocks (`g`) or bonds (`h`) factors out of the transport equation and is
//! solved by log-normal densities; the long-term broker price law is
//! log-normal as well, and the high-frequency steady state is an
//! inverse-gamma density with a power-law tail. The drift coefficients of
//! those solutions are path integrals over the simulation's own history,
//! kept here as [`DriftHistory`] records with trapezoidal cumulatives.
//!
//! Everything in this module is ground truth for the acceptance suite: the
//! densities integrate to one, satisfy the usual log-normal identities, and
//! the inverse-gamma steady state zeroes the stationary price operator.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::erf::erf;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::market::{self, MarketParams, MarketState, K_ZERO_TOL};

/// Time series of a drift integrand `b(t)` together with its running
/// trapezoidal integral and an integration constant added on top, so that
/// `integral_to(t)` returns `B(t) = offset + int_0^t b`.
#[derive(Debug, Clone, Default)]
pub struct DriftHistory {
    times: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
    offset: f64,
}

impl DriftHistory {
    pub fn new(offset: f64) -> Self {
        Self { times: Vec::new(), values: Vec::new(), cumulative: Vec::new(), offset }
    }

    /// Constant integrand on `[t0, t1]`; handy for tests and closed-form
    /// scenarios.
    pub fn constant(value: f64, t0: f64, t1: f64) -> Self {
        let mut h = Self::new(0.0);
        h.push(t0, value);
        h.push(t1, value);
        h
    }

    pub fn from_series(times: &[f64], values: &[f64], offset: f64) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut h = Self::new(offset);
        for (&t, &v) in times.iter().zip(values) {
            h.push(t, v);
        }
        Ok(h)
    }

    /// Append a sample; times must be strictly increasing.
    pub fn push(&mut self, t: f64, value: f64) {
        if let Some(&last) = self.times.last() {
            assert!(t > last, "drift history times must be strictly increasing");
            let dt = t - last;
            let prev_cum = *self.cumulative.last().unwrap();
            let prev_val = *self.values.last().unwrap();
            self.cumulative.push(prev_cum + 0.5 * dt * (prev_val + value));
        } else {
            self.cumulative.push(0.0);
        }
        self.times.push(t);
        self.values.push(value);
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `offset + int_{t_first}^{t} b(tau) dtau` by trapezoidal rule with
    /// linear interpolation inside the bracketing segment.
    pub fn integral_to(&self, t: f64) -> Result<f64> {
        let (first, last) = match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::EmptyInput),
        };
        let tol = 1e-12 * (1.0 + last.abs());
        if t < first - tol || t > last + tol {
            return Err(Error::OutOfHistory { time: t, start: first, end: last });
        }
        let t = t.clamp(first, last);
        let i = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => return Ok(self.offset + self.cumulative[i]),
            Err(i) => i - 1,
        };
        let dt = t - self.times[i];
        let span = self.times[i + 1] - self.times[i];
        let v_t = self.values[i] + (self.values[i + 1] - self.values[i]) * dt / span;
        Ok(self.offset + self.cumulative[i] + 0.5 * dt * (self.values[i] + v_t))
    }
}

/// Fit the integration constants of a diffusive marginal to an initial law:
/// returns `(c, offset)` with `c` the initial log-variance and `offset` the
/// drift-history constant that makes the log-mean match at `t = 0`.
pub fn fit_initial_constants(initial_log_mean: f64, initial_log_var: f64) -> (f64, f64) {
    (initial_log_var, initial_log_mean + initial_log_var / 2.0)
}

/// Log-normal density with log-mean `mu` and log-standard-deviation `sigma`.
pub fn lognormal_density(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveSample { value: x });
    }
    let z = (x.ln() - mu) / sigma;
    Ok((-0.5 * z * z).exp() / (x * sigma * (2.0 * std::f64::consts::PI).sqrt()))
}

/// Log-normal CDF; zero for non-positive arguments.
pub fn lognormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let z = (x.ln() - mu) / (sigma * std::f64::consts::SQRT_2);
    0.5 * (1.0 + erf(z))
}

/// Log-normal parameters of the noise-free stock-wealth marginal `g(t, x)`:
/// fixed log-variance 1/2 and log-mean `int_0^t [K/nu (kappa X + 1) + D/S]`.
pub fn deterministic_marginal_params(t: f64, drift: &DriftHistory) -> Result<(f64, f64)> {
    Ok((drift.integral_to(t)?, 0.5f64.sqrt()))
}

/// Noise-free stock-wealth marginal `g(t, x)`; valid while the aggregate
/// estimate stays negative.
pub fn marginal_g_deterministic(t: f64, x: f64, drift: &DriftHistory) -> Result<f64> {
    let (mu, sigma) = deterministic_marginal_params(t, drift)?;
    lognormal_density(x, mu, sigma)
}

/// Noise-free bond-wealth marginal `h(t, y)` with drift integrand
/// `e(t) = r - K/nu`; valid while the aggregate estimate stays positive.
pub fn marginal_h_deterministic(t: f64, y: f64, drift: &DriftHistory) -> Result<f64> {
    let (mu, sigma) = deterministic_marginal_params(t, drift)?;
    lognormal_density(y, mu, sigma)
}

/// Log-normal parameters of a diffusive marginal: variance `t/nu^2 + c` and
/// mean `B(t) - (t/nu^2 + c)/2`.
pub fn diffusive_marginal_params(
    t: f64,
    drift: &DriftHistory,
    nu: f64,
    c: f64,
) -> Result<(f64, f64)> {
    let var = t / (nu * nu) + c;
    if !(var > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t/nu^2 + c",
            value: var,
            constraint: "must be > 0",
        });
    }
    Ok((drift.integral_to(t)? - var / 2.0, var.sqrt()))
}

/// Stock-wealth marginal of the noisy population (aggregate estimate
/// negative): log-normal with linearly growing log-variance.
pub fn marginal_g_diffusive(t: f64, x: f64, drift: &DriftHistory, nu: f64, c: f64) -> Result<f64> {
    let (mu, sigma) = diffusive_marginal_params(t, drift, nu, c)?;
    lognormal_density(x, mu, sigma)
}

/// Bond-wealth marginal of the noisy population (aggregate estimate
/// positive), drift integrand `e(t) = r - K/nu`.
pub fn marginal_h_diffusive(t: f64, y: f64, drift: &DriftHistory, nu: f64, c1: f64) -> Result<f64> {
    let (mu, sigma) = diffusive_marginal_params(t, drift, nu, c1)?;
    lognormal_density(y, mu, sigma)
}

/// Log-normal parameters of the long-term broker price law: variance
/// `t + c1`, mean `Rbar(t) - (t + c1)/2` with `R(t) = kappa * ED(t)`.
pub fn longterm_price_params(t: f64, rbar: &DriftHistory, c1: f64) -> Result<(f64, f64)> {
    let var = t + c1;
    if !(var > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t + c1",
            value: var,
            constraint: "must be > 0",
        });
    }
    Ok((rbar.integral_to(t)? - var / 2.0, var.sqrt()))
}

/// Price density of the broker ensemble under long-term investors.
pub fn longterm_price_density(t: f64, s: f64, rbar: &DriftHistory, c1: f64) -> Result<f64> {
    let (mu, sigma) = longterm_price_params(t, rbar, c1)?;
    lognormal_density(s, mu, sigma)
}

/// Stationary price law of the high-frequency regime (fixed weight on the
/// fundamentalist estimate, identity value function, constant fundamental
/// price, stationary mean portfolio wealth `P_inf`): an inverse-gamma
/// density
///
/// ```text
/// V(s) = scale^shape / Gamma(shape) * s^-(shape+1) * exp(-scale / s)
/// shape = 1 + 2 (kappa/nu) P_inf (omega + r)
/// scale = 2 (kappa/nu) omega P_inf s_f
/// ```
///
/// whose tail decays like `s^-(shape+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaSteadyState {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGammaSteadyState {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::InvalidSteadyState { shape });
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter {
                name: "scale",
                value: scale,
                constraint: "must be > 0",
            });
        }
        Ok(Self { shape, scale })
    }

    /// Build from model constants and the measured stationary mean wealth.
    pub fn from_market(p: &MarketParams, fundamental: f64, p_inf: f64) -> Result<Self> {
        if !(p_inf > 0.0) {
            return Err(Error::InvalidParameter {
                name: "p_inf",
                value: p_inf,
                constraint: "must be > 0",
            });
        }
        let a = (p.kappa / p.nu) * p_inf;
        Self::new(1.0 + 2.0 * a * (p.omega + p.r), 2.0 * a * p.omega * fundamental)
    }

    pub fn density(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSample { value: s });
        }
        let log_density = self.shape * self.scale.ln()
            - ln_gamma(self.shape)
            - (self.shape + 1.0) * s.ln()
            - self.scale / s;
        Ok(log_density.exp())
    }

    /// `P(S <= s)`; the regularized upper incomplete gamma at `scale/s`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        gamma_ur(self.shape, self.scale / s)
    }

    /// Exponent `alpha` in the tail law `V(s) ~ s^-alpha`; equals
    /// `2 (1 + (kappa/nu) P_inf (omega + r))`.
    pub fn tail_exponent(&self) -> f64 {
        self.shape + 1.0
    }

    /// Mean `scale / (shape - 1)`, where it exists.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    /// Draw one sample (reciprocal of a gamma variate).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let gamma = Gamma::new(self.shape, 1.0 / self.scale).expect("valid gamma");
        1.0 / gamma.sample(rng)
    }
}

/// Density value of the high-frequency steady state; see
/// [`InverseGammaSteadyState`].
pub fn hf_steady_state(s: f64, p: &MarketParams, fundamental: f64, p_inf: f64) -> Result<f64> {
    InverseGammaSteadyState::from_market(p, fundamental, p_inf)?.density(s)
}

/// Apply the discretized stationary price operator
///
/// ```text
/// L[V](s) = 1/2 d^2/ds^2 (s^2 V) - (kappa/nu) P_inf d/ds ([omega s_f - s (omega + r)] V)
/// ```
///
/// to the inverse-gamma steady state on the interior nodes of `grid`
/// (strictly increasing, typically log-spaced). The analytic solution zeroes
/// the operator, so what remains is pure truncation error: its max-norm
/// shrinks at first order or better under grid refinement.
pub fn steady_state_residual(
    p: &MarketParams,
    fundamental: f64,
    p_inf: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if grid.len() < 3 {
        return Err(Error::EmptyInput);
    }
    let oracle = InverseGammaSteadyState::from_market(p, fundamental, p_inf)?;
    let a = (p.kappa / p.nu) * p_inf;
    let diffusion: Vec<f64> = grid
        .iter()
        .map(|&s| oracle.density(s).map(|v| s * s * v))
        .collect::<Result<_>>()?;
    let advection: Vec<f64> = grid
        .iter()
        .map(|&s| {
            oracle
                .density(s)
                .map(|v| (p.omega * fundamental - s * (p.omega + p.r)) * v)
        })
        .collect::<Result<_>>()?;

    let mut residual = Vec::with_capacity(grid.len() - 2);
    for i in 1..grid.len() - 1 {
        let h0 = grid[i] - grid[i - 1];
        let h1 = grid[i + 1] - grid[i];
        // Three-point first and second derivatives on a non-uniform grid.
        let d1 = |f: &[f64]| {
            (h0 * h0 * f[i + 1] - h1 * h1 * f[i - 1] + (h1 * h1 - h0 * h0) * f[i])
                / (h0 * h1 * (h0 + h1))
        };
        let d2 = |f: &[f64]| {
            2.0 * (h0 * f[i + 1] - (h0 + h1) * f[i] + h1 * f[i - 1]) / (h0 * h1 * (h0 + h1))
        };
        residual.push(0.5 * d2(&diffusion) - a * d1(&advection));
    }
    Ok(residual)
}

/// First moments of the portfolio density together with the price, closed
/// for sign-definite aggregate estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    /// Mean wealth in stocks, `X(t)`.
    pub stock_mean: f64,
    /// Mean wealth in bonds, `Y(t)`.
    pub bond_mean: f64,
    /// Macroscopic price `S(t)`.
    pub price: f64,
}

/// Sign regime of the aggregate estimate over the integration interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `K > 0`: bonds flow into stocks; the bond marginal is closed.
    Positive,
    /// `K < 0`: stocks flow into bonds; the stock marginal is closed.
    Negative,
}

/// Excess demand consistent with the current moments: solves the fixed
/// point `ED = (K(S, ED)/nu) * (X or Y)`. One evaluation suffices whenever
/// the weight is pinned, since then `K` does not feed back through the
/// trend estimate.
fn moment_excess_demand(state: &MomentState, p: &MarketParams, fundamental: f64) -> Result<f64> {
    let mut market = MarketState {
        price: state.price,
        excess_demand: 0.0,
        fundamental,
        time: 0.0,
    };
    let mean_control = |k: f64| {
        if k.abs() < K_ZERO_TOL {
            0.0
        } else if k < 0.0 {
            (k / p.nu) * state.stock_mean
        } else {
            (k / p.nu) * state.bond_mean
        }
    };
    let mut ed = mean_control(market::aggregate_estimate(&market, p)?.aggregate);
    for iter in 0..500 {
        market.excess_demand = ed;
        let next = mean_control(market::aggregate_estimate(&market, p)?.aggregate);
        let tol = 1e-13 * (1.0 + ed.abs());
        if (next - ed).abs() <= tol {
            return Ok(next);
        }
        // Damp late iterations in case the plain map oscillates.
        ed = if iter < 50 { next } else { 0.5 * (ed + next) };
    }
    Err(Error::FixedPointDiverged)
}

/// Time derivative of the moment system:
///
/// ```text
/// dX/dt = (kappa ED + D/S) X + u_mean
/// dY/dt = r Y - u_mean
/// dS/dt = kappa ED S
/// ```
///
/// with `u_mean = (K/nu) X` for `K < 0` (so the X equation collapses to
/// `[K/nu (kappa X + 1) + D/S] X`) and `u_mean = (K/nu) Y` for `K > 0`.
/// Errors if the estimate's sign disagrees with `regime`.
pub fn moment_rhs(
    state: &MomentState,
    regime: Regime,
    p: &MarketParams,
    fundamental: f64,
    time: f64,
) -> Result<[f64; 3]> {
    let ed = moment_excess_demand(state, p, fundamental)?;
    let market = MarketState {
        price: state.price,
        excess_demand: ed,
        fundamental,
        time,
    };
    let k = market::aggregate_estimate(&market, p)?.aggregate;
    let sign_ok = k.abs() < K_ZERO_TOL
        || match regime {
            Regime::Positive => k > 0.0,
            Regime::Negative => k < 0.0,
        };
    if !sign_ok {
        return Err(Error::RegimeSwitch { time });
    }
    let u_mean = if k.abs() < K_ZERO_TOL {
        0.0
    } else if k < 0.0 {
        (k / p.nu) * state.stock_mean
    } else {
        (k / p.nu) * state.bond_mean
    };
    Ok([
        (p.kappa * ed + p.dividend / state.price) * state.stock_mean + u_mean,
        p.r * state.bond_mean - u_mean,
        p.kappa * ed * state.price,
    ])
}

/// Integrate the moment system with one classical Runge-Kutta step per grid
/// interval. `times` must be strictly increasing and start at the initial
/// time.
pub fn integrate_moments(
    initial: MomentState,
    regime: Regime,
    p: &MarketParams,
    fundamental: f64,
    times: &[f64],
) -> Result<Vec<MomentState>> {
    if times.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(times.len());
    let mut state = initial;
    out.push(state);
    for w in times.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let add = |s: &MomentState, k: &[f64; 3], h: f64| MomentState {
            stock_mean: s.stock_mean + h * k[0],
            bond_mean: s.bond_mean + h * k[1],
            price: s.price + h * k[2],
        };
        let k1 = moment_rhs(&state, regime, p, fundamental, t)?;
        let k2 = moment_rhs(&add(&state, &k1, dt / 2.0), regime, p, fundamental, t + dt / 2.0)?;
        let k3 = moment_rhs(&add(&state, &k2, dt / 2.0), regime, p, fundamental, t + dt / 2.0)?;
        let k4 = moment_rhs(&add(&state, &k3, dt), regime, p, fundamental, t + dt)?;
        state = MomentState {
            stock_mean: state.stock_mean + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            bond_mean: state.bond_mean + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            price: state.price + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        };
        out.push(state);
    }
    Ok(out)
}

/// Adaptive Simpson quadrature with a recursion-depth cap.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, m: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        m: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = simpson(f, a, lm, m);
        let right = simpson(f, m, rm, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, lm, m, left, tol / 2.0, depth - 1)
                + recurse(f, m, rm, b, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    recurse(&f, a, m, b, simpson(&f, a, m, b), tol, 40)
}
