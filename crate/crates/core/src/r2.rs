//! Five pseudo-R² measures for a fitted Cox model.
//!
//! | measure | built from |
//! |---------|------------|
//! | `n` | likelihood-ratio χ² scaled by sample size |
//! | `k` | likelihood-ratio χ² scaled by event count |
//! | `r` | transform of `k` onto the extreme-value residual scale |
//! | `b` | entropy-loss explained risk, `B / (c + B)` |
//! | `w` | variance of the linear predictor, `v / (1 + v)` |

use crate::cox::CoxFit;
use crate::data::CovariateMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Additive constant in the `b` measure's denominator.
pub const R2_B_CONSTANT: f64 = 0.5772;

/// π²/6, the variance of the standard extreme-value distribution.
pub const EXTREME_VALUE_VARIANCE: f64 = PI * PI / 6.0;

/// Round-off slack tolerated on a negative χ².
const CHI2_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum R2Error {
    #[error("negative likelihood-ratio statistic {0}")]
    NegativeChi2(f64),
    #[error("sample size must be positive")]
    EmptySample,
    #[error("no events observed")]
    NoEvents,
    #[error("r2_k value {0} outside [0, 1)")]
    OutOfRange(f64),
    #[error("entropy denominator {0} is degenerate")]
    DegenerateEntropy(f64),
    #[error("variance measure needs at least 2 observations, got {0}")]
    TooFewRows(usize),
    #[error("{beta} coefficients for a {cols}-column design")]
    Dimension { beta: usize, cols: usize },
    #[error("fit did not converge")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    N,
    K,
    R,
    B,
    W,
}

impl Measure {
    pub const ALL: [Measure; 5] = [Measure::N, Measure::K, Measure::R, Measure::B, Measure::W];

    pub fn suffix(self) -> &'static str {
        match self {
            Measure::N => "n",
            Measure::K => "k",
            Measure::R => "r",
            Measure::B => "b",
            Measure::W => "w",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R2_{}", self.suffix())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("r2_").unwrap_or(&s);
        Measure::ALL
            .into_iter()
            .find(|m| m.suffix() == s)
            .ok_or_else(|| format!("unknown measure '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Options {
    /// Constant `c` in `B / (c + B)`.
    pub b_constant: f64,
    /// Centre the linear predictor before computing `B`.
    pub center_entropy: bool,
}

impl Default for R2Options {
    fn default() -> Self {
        Self {
            b_constant: R2_B_CONSTANT,
            center_entropy: true,
        }
    }
}

fn clamp_chi2(chi2: f64) -> Result<f64, R2Error> {
    if chi2 < -CHI2_SLACK || chi2.is_nan() {
        return Err(R2Error::NegativeChi2(chi2));
    }
    Ok(chi2.max(0.0))
}

/// `1 - exp(-χ²/n)`.
pub fn r2_n(chi2: f64, n: usize) -> Result<f64, R2Error> {
    let chi2 = clamp_chi2(chi2)?;
    if n == 0 {
        return Err(R2Error::EmptySample);
    }
    Ok(-(-chi2 / n as f64).exp_m1())
}

/// `1 - exp(-χ²/e)` with `e` the number of events.
pub fn r2_k(chi2: f64, events: usize) -> Result<f64, R2Error> {
    let chi2 = clamp_chi2(chi2)?;
    if events == 0 {
        return Err(R2Error::NoEvents);
    }
    Ok(-(-chi2 / events as f64).exp_m1())
}

/// `A / (π²/6 + A)` with `A = k / (1 - k)`.
pub fn r2_r(r2_k_value: f64) -> Result<f64, R2Error> {
    if !(0.0..1.0).contains(&r2_k_value) {
        return Err(R2Error::OutOfRange(r2_k_value));
    }
    let a = r2_k_value / (1.0 - r2_k_value);
    Ok(a / (EXTREME_VALUE_VARIANCE + a))
}

fn linear_predictor(beta: &[f64], z: &CovariateMatrix) -> Result<Vec<f64>, R2Error> {
    if beta.len() != z.ncols() {
        return Err(R2Error::Dimension {
            beta: beta.len(),
            cols: z.ncols(),
        });
    }
    Ok(z.values()
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// `B = log(mean_i exp(η_i))` of the linear predictor `η`.
///
/// With `center` the predictor is mean-centred first, which makes `B ≥ 0`
/// (Jensen); the Cox likelihood does not see the shift.
pub fn entropy_b(beta: &[f64], z: &CovariateMatrix, center: bool) -> Result<f64, R2Error> {
    let eta = linear_predictor(beta, z)?;
    if eta.is_empty() {
        return Err(R2Error::EmptySample);
    }
    Ok(log_mean_exp(&eta, center))
}

fn log_mean_exp(eta: &[f64], center: bool) -> f64 {
    let n = eta.len() as f64;
    let offset = if center {
        eta.iter().sum::<f64>() / n
    } else {
        0.0
    };
    let shifted: Vec<f64> = eta.iter().map(|e| e - offset).collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = shifted.iter().map(|e| (e - max).exp()).sum();
    let b = max + (sum / n).ln();
    if center {
        // exact zero for a constant predictor, and no negative round-off
        b.max(0.0)
    } else {
        b
    }
}

/// `B / (c + B)`.
pub fn r2_b(beta: &[f64], z: &CovariateMatrix, opts: &R2Options) -> Result<f64, R2Error> {
    r2_b_from_entropy(entropy_b(beta, z, opts.center_entropy)?, opts)
}

fn r2_b_from_entropy(b: f64, opts: &R2Options) -> Result<f64, R2Error> {
    let den = opts.b_constant + b;
    if den.abs() < 1e-12 {
        return Err(R2Error::DegenerateEntropy(den));
    }
    Ok(b / den)
}

/// Sample variance (n − 1 denominator) of the linear predictor, `v / (1 + v)`.
pub fn r2_w(beta: &[f64], z: &CovariateMatrix) -> Result<f64, R2Error> {
    let eta = linear_predictor(beta, z)?;
    r2_w_from_predictor(&eta)
}

fn r2_w_from_predictor(eta: &[f64]) -> Result<f64, R2Error> {
    let n = eta.len();
    if n < 2 {
        return Err(R2Error::TooFewRows(n));
    }
    let mean = eta.iter().sum::<f64>() / n as f64;
    let v = eta.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(v / (1.0 + v))
}

/// All five measures for one fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct R2Set {
    pub r2_n: f64,
    pub r2_k: f64,
    pub r2_r: f64,
    pub r2_b: f64,
    pub r2_w: f64,
    /// Entropy term behind `r2_b`.
    pub entropy_b: f64,
    pub n: usize,
    pub n_events: usize,
}

impl R2Set {
    pub fn get(&self, m: Measure) -> f64 {
        match m {
            Measure::N => self.r2_n,
            Measure::K => self.r2_k,
            Measure::R => self.r2_r,
            Measure::B => self.r2_b,
            Measure::W => self.r2_w,
        }
    }

    /// Set when the entropy term is negative (only possible without centring).
    pub fn b_negative(&self) -> bool {
        self.entropy_b < 0.0
    }
}

/// Computes every measure from a converged fit and its design matrix.
pub fn compute_all(fit: &CoxFit, z: &CovariateMatrix, opts: &R2Options) -> Result<R2Set, R2Error> {
    if !fit.converged {
        return Err(R2Error::NotConverged);
    }
    let k = r2_k(fit.chi2, fit.n_events)?;
    let eta = linear_predictor(&fit.beta, z)?;
    if eta.is_empty() {
        return Err(R2Error::EmptySample);
    }
    let b = log_mean_exp(&eta, opts.center_entropy);
    Ok(R2Set {
        r2_n: r2_n(fit.chi2, fit.n)?,
        r2_k: k,
        r2_r: r2_r(k)?,
        r2_b: r2_b_from_entropy(b, opts)?,
        r2_w: r2_w_from_predictor(&eta)?,
        entropy_b: b,
        n: fit.n,
        n_events: fit.n_events,
    })
}
