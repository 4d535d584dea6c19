//! Empirical statistics for validating distributions and stylized facts:
//! histograms, maximum-likelihood and method-of-moments fits, K-S distances,
//! Gaussian quantile pairs, excess kurtosis and Hill tail exponents.
//!
//! All routines are pure functions over sample slices.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

/// Bin spacing for [`histogram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    Linear,
    /// Geometric bins; requires strictly positive samples. The natural
    /// choice for prices and wealth, which are positive and skewed.
    Log,
}

/// Mass-one normalized histogram density estimate.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    /// Strictly increasing bin edges, `len = bins + 1`.
    pub bin_edges: Vec<f64>,
    /// Probability density per bin; `sum(density * width) = 1`.
    pub densities: Vec<f64>,
    /// Number of samples behind the estimate.
    pub n: usize,
}

impl DensityEstimate {
    /// Bin midpoints (geometric mean for log bins would differ; these are
    /// arithmetic centers, which is what the CSV exports carry).
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Total mass `sum(density * width)`; equals 1 up to rounding.
    pub fn mass(&self) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(&self.densities)
            .map(|(w, d)| (w[1] - w[0]) * d)
            .sum()
    }
}

/// Histogram density estimate over `n_bins` linear or geometric bins
/// spanning the sample range. Constant samples produce a single occupied
/// unit-width bin.
pub fn histogram(samples: &[f64], binning: Binning, n_bins: usize) -> Result<DensityEstimate> {
    if samples.is_empty() || n_bins == 0 {
        return Err(Error::EmptyInput);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in samples {
        if !s.is_finite() {
            return Err(Error::NonFinite { context: "histogram sample" });
        }
        if binning == Binning::Log && s <= 0.0 {
            return Err(Error::NonPositiveSample { value: s });
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if lo == hi {
        return Ok(DensityEstimate {
            bin_edges: vec![lo - 0.5, lo + 0.5],
            densities: vec![1.0],
            n: samples.len(),
        });
    }
    let edges: Vec<f64> = match binning {
        Binning::Linear => (0..=n_bins)
            .map(|i| lo + (hi - lo) * i as f64 / n_bins as f64)
            .collect(),
        Binning::Log => {
            let (llo, lhi) = (lo.ln(), hi.ln());
            (0..=n_bins)
                .map(|i| (llo + (lhi - llo) * i as f64 / n_bins as f64).exp())
                .collect()
        }
    };
    let mut counts = vec![0usize; n_bins];
    for &s in samples {
        let idx = match binning {
            Binning::Linear => ((s - lo) / (hi - lo) * n_bins as f64) as usize,
            Binning::Log => ((s.ln() - lo.ln()) / (hi.ln() - lo.ln()) * n_bins as f64) as usize,
        };
        counts[idx.min(n_bins - 1)] += 1;
    }
    let n = samples.len() as f64;
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
        .collect();
    Ok(DensityEstimate { bin_edges: edges, densities, n: samples.len() })
}

/// Kolmogorov-Smirnov statistic between a sample and a reference CDF:
/// the sup-norm distance between empirical and oracle CDFs.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
    }
    Ok(sup)
}

/// Two-sample Kolmogorov-Smirnov statistic (used by the stationarity
/// stopping rule).
pub fn ks_distance_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        if xa[i] <= xb[j] {
            i += 1;
        } else {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Maximum-likelihood log-normal fit: `(mu, sigma)` are the mean and the
/// (population) standard deviation of the log-samples. `mu` is the log of
/// the geometric mean; constant samples give `sigma = 0`.
pub fn fit_lognormal(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut logs = Vec::with_capacity(samples.len());
    for &s in samples {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSample { value: s });
        }
        logs.push(s.ln());
    }
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// Result of [`fit_inverse_gamma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaFit {
    pub shape: f64,
    pub scale: f64,
    /// Set when the method-of-moments start was too close to the
    /// infinite-variance region (shape <= 2.25) to be trusted, so the
    /// maximum-likelihood search ran from a wide bracket instead.
    pub heavy_tail_fallback: bool,
}

/// Inverse-gamma fit. Method of moments (`shape = m^2/v + 2`,
/// `scale = m (shape - 1)`) seeds a one-dimensional profile
/// maximum-likelihood search on the shape; the scale follows as
/// `n * shape / sum(1/x)`.
pub fn fit_inverse_gamma(samples: &[f64]) -> Result<InverseGammaFit> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = samples.len() as f64;
    let mut sum = 0.0;
    let mut sum_inv = 0.0;
    let mut sum_log = 0.0;
    for &s in samples {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSample { value: s });
        }
        sum += s;
        sum_inv += 1.0 / s;
        sum_log += s.ln();
    }
    let mean = sum / n;
    let var = samples.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let shape_mom = mean * mean / var + 2.0;
    let heavy_tail_fallback = shape_mom <= 2.25;

    // Profile likelihood: maximize over shape with scale(shape) = n*shape/T.
    // The derivative ln(n*a/T) - digamma(a) - L/n is strictly decreasing in
    // a, so bisection is safe once the root is bracketed.
    let score = |a: f64| (n * a / sum_inv).ln() - digamma(a) - sum_log / n;
    let (mut lo, mut hi) = if heavy_tail_fallback {
        (0.05, 64.0)
    } else {
        (shape_mom / 8.0, shape_mom * 8.0)
    };
    while score(lo) < 0.0 && lo > 1e-6 {
        lo /= 4.0;
    }
    while score(hi) > 0.0 && hi < 1e9 {
        hi *= 4.0;
    }
    let mut shape = shape_mom;
    if score(lo) >= 0.0 && score(hi) <= 0.0 {
        for _ in 0..200 {
            shape = 0.5 * (lo + hi);
            if score(shape) > 0.0 {
                lo = shape;
            } else {
                hi = shape;
            }
        }
    }
    let scale = n * shape / sum_inv;
    Ok(InverseGammaFit { shape, scale, heavy_tail_fallback })
}

/// Logarithmic returns `r_t = ln(S_{t+lag} / S_t)`.
pub fn log_returns(path: &[f64], lag: usize) -> Result<Vec<f64>> {
    if lag == 0 || path.len() <= lag {
        return Err(Error::PathTooShort { len: path.len(), need: lag });
    }
    for &s in path {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSample { value: s });
        }
    }
    Ok(path.windows(lag + 1).map(|w| (w[lag] / w[0]).ln()).collect())
}

/// Gaussian quantile pairs `(theoretical, empirical)`: the sorted
/// standardized sample against standard-normal quantiles at the plotting
/// positions `(i - 0.5)/n`. Heavy-tailed data bends away from the diagonal
/// at both ends.
pub fn qq_gaussian(series: &[f64]) -> Result<Vec<(f64, f64)>> {
    if series.len() < 2 {
        return Err(Error::PathTooShort { len: series.len(), need: 2 });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let sd = var.sqrt();
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (normal.inverse_cdf((i as f64 + 0.5) / n), (x - mean) / sd))
        .collect())
}

/// Excess kurtosis `m4 / m2^2 - 3` from central moments; 0 for a Gaussian.
pub fn excess_kurtosis(series: &[f64]) -> Result<f64> {
    if series.len() < 4 {
        return Err(Error::PathTooShort { len: series.len(), need: 4 });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &s in series {
        let d = s - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Default order-statistics count for the Hill estimator: `ceil(n^0.6)`,
/// clamped to the valid range.
pub fn default_hill_k(n: usize) -> usize {
    ((n as f64).powf(0.6).ceil() as usize).clamp(10, n.saturating_sub(1).max(10))
}

/// Hill estimate of the *density* tail exponent from the `k` largest
/// samples: the survival-function index `1 / mean(ln(x_(i) / x_(k)))` plus
/// one. For an inverse-gamma price law this targets `shape + 1`.
pub fn hill_tail_exponent(samples: &[f64], k: usize) -> Result<f64> {
    let n = samples.len();
    if k < 10 || k >= n {
        return Err(Error::InvalidTailCount { k, n });
    }
    let mut sorted = Vec::with_capacity(n);
    for &s in samples {
        if !(s > 0.0) {
            return Err(Error::NonPositiveSample { value: s });
        }
        sorted.push(s);
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let pivot = sorted[k];
    let mean_log: f64 = sorted[..k].iter().map(|&x| (x / pivot).ln()).sum::<f64>() / k as f64;
    if !(mean_log > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(1.0 / mean_log + 1.0)
}

/// Hill estimates over a grid of `k` values, for stability inspection. A
/// genuine power law shows a plateau; exponential-type tails drift without
/// settling.
pub fn hill_stability(samples: &[f64], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| hill_tail_exponent(samples, k).map(|e| (k, e)))
        .collect()
}
