//! Three-model Cox mediation: R²-based mediated share plus the classical
//! product and difference proportions.

use crate::cox::{fit_cox, CoxError, CoxFit, FitOptions, TieMethod};
use crate::data::{CovariateMatrix, MediationDataset};
use crate::linalg::Cholesky;
use crate::r2::{compute_all, Measure, R2Error, R2Options, R2Set};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Which of the three outcome models a fit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Model {
    /// T ~ X
    Exposure,
    /// T ~ M
    Mediators,
    /// T ~ X + M
    Joint,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Exposure => "T~X",
            Model::Mediators => "T~M",
            Model::Joint => "T~X+M",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediationError {
    #[error("{model} fit failed: {source}")]
    Fit { model: Model, source: CoxError },
    #[error("{model} fit did not converge in {iterations} iterations")]
    NotConverged { model: Model, iterations: usize },
    #[error("{model} R² failed: {source}")]
    R2 { model: Model, source: R2Error },
    #[error("mediator regression design is rank deficient")]
    SingularRegression,
    #[error("mediator regression needs n > q_x + 1 (n = {n}, q_x = {q_x})")]
    TooFewRows { n: usize, q_x: usize },
    #[error("product/difference proportions need a single exposure column, got {0}")]
    UnsupportedExposure(usize),
}

/// Shared settings for the three fits and the R² computations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MediationOptions {
    pub ties: TieMethod,
    pub fit: FitOptions,
    pub r2: R2Options,
}

#[derive(Debug, Clone)]
pub struct ThreeFits {
    pub exposure: CoxFit,
    pub mediators: CoxFit,
    pub joint: CoxFit,
}

fn fit_one(
    ds: &MediationDataset,
    z: &CovariateMatrix,
    model: Model,
    opts: &MediationOptions,
) -> Result<CoxFit, MediationError> {
    let fit = fit_cox(ds.outcomes(), z, opts.ties, &opts.fit)
        .map_err(|source| MediationError::Fit { model, source })?;
    if !fit.converged {
        return Err(MediationError::NotConverged {
            model,
            iterations: fit.iterations,
        });
    }
    Ok(fit)
}

/// Fits T~X, T~M and T~X+M on identical rows with one tie method.
pub fn fit_three_models(
    ds: &MediationDataset,
    opts: &MediationOptions,
) -> Result<ThreeFits, MediationError> {
    Ok(ThreeFits {
        exposure: fit_one(ds, ds.exposure(), Model::Exposure, opts)?,
        mediators: fit_one(ds, ds.mediators(), Model::Mediators, opts)?,
        joint: fit_one(ds, &ds.joint_covariates(), Model::Joint, opts)?,
    })
}

/// OLS of each mediator on `(1, X)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediatorRegression {
    /// `a[j][k]`: slope of mediator j on exposure column k.
    pub a: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub residual_sd: Vec<f64>,
}

pub fn fit_mediator_regressions(
    ds: &MediationDataset,
) -> Result<MediatorRegression, MediationError> {
    let n = ds.n();
    let q_x = ds.q_x();
    if n <= q_x + 1 {
        return Err(MediationError::TooFewRows { n, q_x });
    }
    let x = ds.exposure().values();
    let k = q_x + 1;
    let mut design = Array2::<f64>::ones((n, k));
    design.slice_mut(ndarray::s![.., 1..]).assign(&x);
    let gram = design.t().dot(&design);
    let chol = Cholesky::factor(&gram).ok_or(MediationError::SingularRegression)?;

    let m = ds.mediators().values();
    let mut a = Vec::with_capacity(ds.p());
    let mut intercepts = Vec::with_capacity(ds.p());
    let mut residual_sd = Vec::with_capacity(ds.p());
    for col in m.columns() {
        let rhs: Array1<f64> = design.t().dot(&col);
        let coef = chol.solve(&rhs);
        let fitted = design.dot(&coef);
        let rss: f64 = col.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum();
        intercepts.push(coef[0]);
        a.push(coef.iter().skip(1).copied().collect());
        residual_sd.push((rss / (n - k) as f64).sqrt());
    }
    Ok(MediatorRegression {
        a,
        intercepts,
        residual_sd,
    })
}

/// `exp(Σ_j a_j b_j) / exp(c)` for a scalar exposure.
pub fn product_measure(
    regression: &MediatorRegression,
    b: &[f64],
    c: &[f64],
) -> Result<f64, MediationError> {
    if c.len() != 1 {
        return Err(MediationError::UnsupportedExposure(c.len()));
    }
    if let Some(row) = regression.a.iter().find(|row| row.len() != 1) {
        return Err(MediationError::UnsupportedExposure(row.len()));
    }
    let indirect: f64 = regression.a.iter().zip(b).map(|(a, b)| a[0] * b).sum();
    Ok((indirect - c[0]).exp())
}

/// `exp(c - r) / exp(c) = exp(-r)` for a scalar exposure.
pub fn difference_measure(r: &[f64]) -> Result<f64, MediationError> {
    match r {
        [r] => Ok((-r).exp()),
        _ => Err(MediationError::UnsupportedExposure(r.len())),
    }
}

/// One R² measure across the three models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureRecord {
    pub measure: Measure,
    pub r2_tx: f64,
    pub r2_tm: f64,
    pub r2_txm: f64,
    /// `r2_tm + r2_tx - r2_txm`; never clamped.
    pub r2_med: f64,
    /// `r2_med / r2_tx`; `None` when `r2_tx == 0`.
    pub sos: Option<f64>,
    pub r2_med_negative: bool,
}

impl MeasureRecord {
    pub fn from_components(measure: Measure, r2_tx: f64, r2_tm: f64, r2_txm: f64) -> Self {
        let r2_med = r2_tm + r2_tx - r2_txm;
        let sos = (r2_tx != 0.0).then(|| r2_med / r2_tx);
        Self {
            measure,
            r2_tx,
            r2_tm,
            r2_txm,
            r2_med,
            sos,
            r2_med_negative: r2_med < 0.0,
        }
    }

    pub fn sos_undefined(&self) -> bool {
        self.sos.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficients {
    /// Total effect(s), T~X.
    pub c: Vec<f64>,
    /// Direct effect(s), exposure part of T~X+M.
    pub r: Vec<f64>,
    /// Mediator part of T~X+M.
    pub b: Vec<f64>,
    /// T~M.
    pub d: Vec<f64>,
    /// Mediator-on-exposure slopes.
    pub a: Vec<Vec<f64>>,
}

/// Percentile interval for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub quantity: Quantity,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediationReport {
    pub exposure_names: Vec<String>,
    pub mediator_names: Vec<String>,
    pub n: usize,
    pub n_events: usize,
    pub measures: Vec<MeasureRecord>,
    pub product_proportion: Option<f64>,
    pub difference_proportion: Option<f64>,
    pub coefficients: Coefficients,
    pub regression: MediatorRegression,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<Interval>,
}

impl MediationReport {
    pub fn measure(&self, m: Measure) -> &MeasureRecord {
        self.measures
            .iter()
            .find(|r| r.measure == m)
            .expect("every measure is present")
    }

    pub fn quantity(&self, q: Quantity) -> Option<f64> {
        match q {
            Quantity::R2Tx(m) => Some(self.measure(m).r2_tx),
            Quantity::R2Tm(m) => Some(self.measure(m).r2_tm),
            Quantity::R2Txm(m) => Some(self.measure(m).r2_txm),
            Quantity::R2Med(m) => Some(self.measure(m).r2_med),
            Quantity::Sos(m) => self.measure(m).sos,
            Quantity::Product => self.product_proportion,
            Quantity::Difference => self.difference_proportion,
        }
    }
}

/// Selects one scalar output of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    R2Tx(Measure),
    R2Tm(Measure),
    R2Txm(Measure),
    R2Med(Measure),
    Sos(Measure),
    Product,
    Difference,
}

impl Quantity {
    /// Mediated share and mediated R² for every measure, then the proportions.
    pub fn headline() -> Vec<Quantity> {
        let mut v: Vec<Quantity> = Measure::ALL.iter().map(|&m| Quantity::Sos(m)).collect();
        v.extend(Measure::ALL.iter().map(|&m| Quantity::R2Med(m)));
        v.push(Quantity::Product);
        v.push(Quantity::Difference);
        v
    }

    /// The three component R² values for every measure.
    pub fn components() -> Vec<Quantity> {
        let mut v = Vec::new();
        for ctor in [Quantity::R2Tx, Quantity::R2Tm, Quantity::R2Txm] {
            v.extend(Measure::ALL.iter().map(|&m| ctor(m)));
        }
        v
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::R2Tx(m) => write!(f, "r2_tx_{}", m.suffix()),
            Quantity::R2Tm(m) => write!(f, "r2_tm_{}", m.suffix()),
            Quantity::R2Txm(m) => write!(f, "r2_txm_{}", m.suffix()),
            Quantity::R2Med(m) => write!(f, "r2_med_{}", m.suffix()),
            Quantity::Sos(m) => write!(f, "sos_{}", m.suffix()),
            Quantity::Product => f.write_str("product"),
            Quantity::Difference => f.write_str("difference"),
        }
    }
}

impl FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "product" => return Ok(Quantity::Product),
            "difference" => return Ok(Quantity::Difference),
            _ => {}
        }
        let (head, tail) = s
            .rsplit_once('_')
            .ok_or_else(|| format!("unknown quantity '{s}'"))?;
        let m: Measure = tail.parse()?;
        match head {
            "r2_tx" => Ok(Quantity::R2Tx(m)),
            "r2_tm" => Ok(Quantity::R2Tm(m)),
            "r2_txm" => Ok(Quantity::R2Txm(m)),
            "r2_med" => Ok(Quantity::R2Med(m)),
            "sos" => Ok(Quantity::Sos(m)),
            _ => Err(format!("unknown quantity '{s}'")),
        }
    }
}

impl Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn r2_for(
    fit: &CoxFit,
    z: &CovariateMatrix,
    model: Model,
    opts: &MediationOptions,
) -> Result<R2Set, MediationError> {
    compute_all(fit, z, &opts.r2).map_err(|source| MediationError::R2 { model, source })
}

/// Assembles a report from already-fitted models.
pub fn report_from_fits(
    ds: &MediationDataset,
    fits: &ThreeFits,
    regression: MediatorRegression,
    opts: &MediationOptions,
) -> Result<MediationReport, MediationError> {
    let joint_z = ds.joint_covariates();
    let tx = r2_for(&fits.exposure, ds.exposure(), Model::Exposure, opts)?;
    let tm = r2_for(&fits.mediators, ds.mediators(), Model::Mediators, opts)?;
    let txm = r2_for(&fits.joint, &joint_z, Model::Joint, opts)?;
    let measures = Measure::ALL
        .iter()
        .map(|&m| MeasureRecord::from_components(m, tx.get(m), tm.get(m), txm.get(m)))
        .collect();

    let q_x = ds.q_x();
    let coefficients = Coefficients {
        c: fits.exposure.beta.clone(),
        r: fits.joint.beta[..q_x].to_vec(),
        b: fits.joint.beta[q_x..].to_vec(),
        d: fits.mediators.beta.clone(),
        a: regression.a.clone(),
    };
    let (product_proportion, difference_proportion) = if q_x == 1 {
        (
            Some(product_measure(
                &regression,
                &coefficients.b,
                &coefficients.c,
            )?),
            Some(difference_measure(&coefficients.r)?),
        )
    } else {
        (None, None)
    };

    Ok(MediationReport {
        exposure_names: ds.exposure().names().to_vec(),
        mediator_names: ds.mediators().names().to_vec(),
        n: ds.n(),
        n_events: ds.n_events(),
        measures,
        product_proportion,
        difference_proportion,
        coefficients,
        regression,
        intervals: Vec::new(),
    })
}

/// Runs the full pipeline: three Cox fits, mediator regressions, all five
/// R² measures with their mediated share.
pub fn r2_mediation(
    ds: &MediationDataset,
    opts: &MediationOptions,
) -> Result<MediationReport, MediationError> {
    let fits = fit_three_models(ds, opts)?;
    let regression = fit_mediator_regressions(ds)?;
    report_from_fits(ds, &fits, regression, opts)
}
