//! Synthetic mediation data from the structural true model:
//!
//! ```text
//! X ~ N(0, 1)
//! M_j = a_j X + ε_j,            ε_j ~ N(0, σ²)
//! λ(t | X, M) = λ t^(λ-1) exp(η + r X + Σ b_j M_j)
//! ```
//!
//! with independent exponential censoring whose mean is calibrated to hit a
//! target censor rate.

use crate::data::{CovariateMatrix, MediationDataset, SurvivalRecord, MAX_MEDIATORS};
use crate::rng::substream;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_WEIBULL_SHAPE: f64 = 2.0;
pub const DEFAULT_WEIBULL_ETA: f64 = -5.0;
pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const DEFAULT_SEED: u64 = 20_210_101;

/// Draws in the censoring calibration pilot sample.
pub const PILOT_SIZE: usize = 100_000;
/// Stream index reserved for the calibration pilot.
const PILOT_STREAM: u64 = u64::MAX;
const MAX_BISECTIONS: usize = 60;
/// Stop once the pilot censor proportion is this close to target.
const CALIBRATION_TOL: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("censor rate {target} unreachable with exponential censoring (pilot range {low:.4}..{high:.4})")]
    Calibration { target: f64, low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    S1,
    S2,
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::S1,
        Family::S2,
        Family::M1,
        Family::M2,
        Family::M3,
        Family::M4,
        Family::M5,
    ];

    /// Name of the parameter that varies across the family.
    pub fn axis_name(self) -> &'static str {
        match self {
            Family::S1 | Family::M1 => "censor_rate",
            Family::S2 => "n",
            Family::M2 => "a",
            Family::M3 => "b",
            Family::M4 => "r",
            Family::M5 => "p",
        }
    }

    pub fn axis_value(self, cfg: &ScenarioConfig) -> f64 {
        match self {
            Family::S1 | Family::M1 => cfg.target_censor_rate,
            Family::S2 => cfg.n as f64,
            Family::M2 => cfg.a[0],
            Family::M3 => cfg.b[0],
            Family::M4 => cfg.r,
            Family::M5 => cfg.p as f64,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown scenario family '{s}' (expected S1, S2, M1..M5)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub family: Option<Family>,
    pub n: usize,
    pub p: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Direct effect of X in the joint hazard.
    pub r: f64,
    pub weibull_shape: f64,
    pub weibull_eta: f64,
    pub target_censor_rate: f64,
    pub mediator_noise_sd: f64,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Scenario with equal coefficients across `p` mediators and the default
    /// Weibull baseline.
    pub fn uniform(n: usize, p: usize, a: f64, b: f64, r: f64, censor: f64) -> Self {
        Self {
            scenario_id: format!("custom[n={n},p={p}]"),
            family: None,
            n,
            p,
            a: vec![a; p],
            b: vec![b; p],
            r,
            weibull_shape: DEFAULT_WEIBULL_SHAPE,
            weibull_eta: DEFAULT_WEIBULL_ETA,
            target_censor_rate: censor,
            mediator_noise_sd: 1.0,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.weibull_shape > 0.0 && self.weibull_shape.is_finite()) {
            return bad(format!(
                "weibull shape {} must be positive",
                self.weibull_shape
            ));
        }
        if !self.weibull_eta.is_finite() || !self.r.is_finite() {
            return bad("non-finite coefficient".into());
        }
        if self.n < 50 {
            return bad(format!("n = {} below 50", self.n));
        }
        if self.p == 0 || self.p > MAX_MEDIATORS {
            return bad(format!("p = {} outside 1..=10", self.p));
        }
        if self.a.len() != self.p || self.b.len() != self.p {
            return bad(format!(
                "a has {} and b has {} entries for p = {}",
                self.a.len(),
                self.b.len(),
                self.p
            ));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return bad("non-finite mediator coefficient".into());
        }
        if !(0.0..=0.99).contains(&self.target_censor_rate) {
            return bad(format!(
                "censor rate {} outside [0, 0.99]",
                self.target_censor_rate
            ));
        }
        if !(self.mediator_noise_sd >= 0.0 && self.mediator_noise_sd.is_finite()) {
            return bad(format!(
                "noise sd {} must be non-negative",
                self.mediator_noise_sd
            ));
        }
        Ok(())
    }
}

fn base(family: Family, n: usize, p: usize, a: f64, b: f64, r: f64, censor: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::uniform(n, p, a, b, r, censor);
    cfg.family = Some(family);
    cfg.scenario_id = format!(
        "{family}[{}={}]",
        family.axis_name(),
        family.axis_value(&cfg)
    );
    cfg
}

/// The exact configuration grid for a scenario family.
pub fn make_scenarios(family: Family) -> Vec<ScenarioConfig> {
    const S1_CENSOR: [f64; 9] = [0.05, 0.15, 0.20, 0.25, 0.35, 0.65, 0.85, 0.90, 0.95];
    const S2_N: [usize; 5] = [200, 500, 1000, 2000, 5000];
    const M1_CENSOR: [f64; 5] = [0.05, 0.25, 0.65, 0.85, 0.95];
    const M2_A: [f64; 6] = [0.05, 0.25, 0.5, 1.0, 3.0, 5.0];
    const M3_B: [f64; 6] = [0.01, 0.25, 0.5, 1.0, 2.0, 3.0];
    const M4_R: [f64; 6] = [0.05, 0.5, 1.0, 2.0, 5.0, 10.0];

    use Family::*;
    match family {
        S1 => S1_CENSOR
            .iter()
            .map(|&c| base(S1, 2000, 1, 0.5, -1.5, 2.0, c))
            .collect(),
        S2 => S2_N
            .iter()
            .map(|&n| base(S2, n, 1, 0.5, -1.5, 2.0, 0.25))
            .collect(),
        M1 => M1_CENSOR
            .iter()
            .map(|&c| base(M1, 2000, 5, 1.0, 0.5, 2.5, c))
            .collect(),
        M2 => M2_A
            .iter()
            .map(|&a| base(M2, 2000, 5, a, 0.5, 2.5, 0.85))
            .collect(),
        M3 => M3_B
            .iter()
            .map(|&b| base(M3, 2000, 5, 1.0, b, 2.5, 0.85))
            .collect(),
        M4 => M4_R
            .iter()
            .map(|&r| base(M4, 2000, 5, 1.0, 0.5, r, 0.85))
            .collect(),
        M5 => (1..=5)
            .map(|p| base(M5, 2000, p, 1.0, 0.5, 2.5, 0.85))
            .collect(),
    }
}

/// Inverse-transform draw from the Weibull proportional-hazards model:
/// solves `S(t) = u` for `S(t) = exp(-t^shape · exp(eta + lp))`.
pub fn weibull_ph_time(u: f64, linear_predictor: f64, shape: f64, eta: f64) -> f64 {
    (-u.ln() / (eta + linear_predictor).exp()).powf(1.0 / shape)
}

/// Uncensored draws for one dataset.
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub x: Vec<f64>,
    /// Row-major n×p.
    pub m: Vec<f64>,
    pub times: Vec<f64>,
}

/// Draws exposure, mediators and event times. Consumes, in order, all X, all
/// mediator noise, then all uniforms.
pub fn draw_latent<R: Rng + ?Sized>(cfg: &ScenarioConfig, n: usize, rng: &mut R) -> LatentSample {
    let p = cfg.p;
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut m = Vec::with_capacity(n * p);
    for &xi in &x {
        for j in 0..p {
            let eps: f64 = StandardNormal.sample(rng);
            m.push(cfg.a[j] * xi + cfg.mediator_noise_sd * eps);
        }
    }
    let times = (0..n)
        .map(|i| {
            let u: f64 = Open01.sample(rng);
            let lp = cfg.r * x[i] + (0..p).map(|j| cfg.b[j] * m[i * p + j]).sum::<f64>();
            weibull_ph_time(u, lp, cfg.weibull_shape, cfg.weibull_eta)
        })
        .collect();
    LatentSample { x, m, times }
}

/// Mean of the exponential censoring distribution; `+∞` means no censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CensorScale(pub f64);

impl CensorScale {
    pub const NONE: CensorScale = CensorScale(f64::INFINITY);

    pub fn is_none(self) -> bool {
        self.0.is_infinite()
    }
}

/// Expected censored share given event times when `C ~ Exp(mean θ)`:
/// `P(C < T) = 1 - exp(-T/θ)`.
fn expected_censor_share(times: &[f64], theta: f64) -> f64 {
    let s: f64 = times.iter().map(|t| -(-t / theta).exp_m1()).sum();
    s / times.len() as f64
}

/// Finds the exponential censoring mean that hits the target censor rate on
/// a 100 000-draw pilot sample, by bisection on `log θ ∈ [-20, 20]`.
pub fn calibrate_censoring(cfg: &ScenarioConfig) -> Result<CensorScale, SimError> {
    cfg.validate()?;
    let target = cfg.target_censor_rate;
    if target == 0.0 {
        return Ok(CensorScale::NONE);
    }
    let mut rng = substream(cfg.seed, PILOT_STREAM);
    let pilot = draw_latent(cfg, PILOT_SIZE, &mut rng).times;

    let (mut lo, mut hi) = (-20.0_f64, 20.0_f64);
    let share = |log_theta: f64| expected_censor_share(&pilot, log_theta.exp());
    let (high, low) = (share(lo), share(hi));
    if !(target <= high && target >= low) {
        return Err(SimError::Calibration { target, low, high });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let s = share(mid);
        if (s - target).abs() < CALIBRATION_TOL {
            break;
        }
        // share falls as θ grows
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CensorScale(mid.exp()))
}

/// `exit = min(T, C)`, `event = T <= C`, all entries 0.
pub fn censor_with(times: &[f64], censor_times: &[f64]) -> Vec<SurvivalRecord> {
    times
        .iter()
        .zip(censor_times)
        .map(|(&t, &c)| SurvivalRecord::untruncated(t.min(c), t <= c))
        .collect()
}

/// Applies independent exponential censoring with the given mean.
pub fn apply_censoring<R: Rng + ?Sized>(
    times: &[f64],
    scale: CensorScale,
    rng: &mut R,
) -> Vec<SurvivalRecord> {
    if scale.is_none() {
        return times
            .iter()
            .map(|&t| SurvivalRecord::untruncated(t, true))
            .collect();
    }
    let c: Vec<f64> = times
        .iter()
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            scale.0 * e
        })
        .collect();
    censor_with(times, &c)
}

/// A configuration with its censoring already calibrated, ready to generate
/// replicates.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub censor_scale: CensorScale,
}

impl PreparedScenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        let censor_scale = calibrate_censoring(&config)?;
        Ok(Self {
            config,
            censor_scale,
        })
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> MediationDataset {
        let cfg = &self.config;
        let latent = draw_latent(cfg, cfg.n, rng);
        let outcomes = apply_censoring(&latent.times, self.censor_scale, rng);
        let x = CovariateMatrix::column(latent.x, "X");
        let m = CovariateMatrix::with_prefix(
            Array2::from_shape_vec((cfg.n, cfg.p), latent.m).expect("n×p mediators"),
            "M",
        );
        MediationDataset::new(outcomes, x, m)
    }

    /// Replicate `index` of this scenario under `seed`.
    pub fn replicate(&self, seed: u64, index: u64) -> MediationDataset {
        self.generate(&mut substream(seed, index))
    }
}

/// Calibrates and generates one dataset.
pub fn gen_dataset<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<MediationDataset, SimError> {
    Ok(PreparedScenario::new(cfg.clone())?.generate(rng))
}
