//! Maximum partial-likelihood fitting of Cox proportional-hazards models.
//!
//! Risk sets honour left truncation: subject `i` is at risk at `t` iff
//! `entry_i < t <= exit_i`. Tied event times are handled with either the
//! Efron or the Breslow approximation. The baseline hazard is never estimated.

use crate::data::{CovariateMatrix, SurvivalRecord};
use crate::linalg::Cholesky;
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

impl fmt::Display for TieMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieMethod::Efron => "efron",
            TieMethod::Breslow => "breslow",
        })
    }
}

impl FromStr for TieMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "efron" => Ok(TieMethod::Efron),
            "breslow" => Ok(TieMethod::Breslow),
            other => Err(format!("unknown tie method '{other}'")),
        }
    }
}

/// Newton–Raphson controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when `|Δloglik| / |loglik|` falls below this.
    pub loglik_rel_tol: f64,
    /// Stop when the max-norm of the score falls below this.
    pub grad_tol: f64,
    /// Step halvings tried before giving up on an iteration.
    pub max_halvings: usize,
    /// Any |β_j| beyond this is reported as a diverging coefficient.
    pub divergence_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            loglik_rel_tol: 1e-9,
            grad_tol: 1e-8,
            max_halvings: 10,
            divergence_bound: 50.0,
        }
    }
}

/// A converged fit must also satisfy this score bound.
const CONVERGED_SCORE_BOUND: f64 = 1e-6;

/// Distance, in standard deviations of the covariate, that a coefficient is
/// pushed along its own sign when probing for a monotone likelihood.
const MONOTONE_PROBE_SD: f64 = 50.0;

const POLISH_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoxError {
    #[error("dimension mismatch: {outcomes} outcomes, {rows} covariate rows, {beta} coefficients for {cols} columns")]
    Dimension {
        outcomes: usize,
        rows: usize,
        beta: usize,
        cols: usize,
    },
    #[error("no events observed")]
    NoEvents,
    #[error("design has no covariates")]
    EmptyDesign,
    #[error("information matrix is singular (collinear or constant covariates{})", column_note(.column))]
    Singular { column: Option<usize> },
    #[error("monotone likelihood: coefficient {coefficient} diverges")]
    MonotoneLikelihood { coefficient: usize },
    #[error("non-finite coefficient vector")]
    NonFinite,
}

fn column_note(c: &Option<usize>) -> String {
    c.map(|j| format!(", column {j}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Maximized partial log-likelihood.
    pub loglik: f64,
    /// Partial log-likelihood at β = 0.
    pub null_loglik: f64,
    /// Likelihood-ratio statistic `2 (loglik - null_loglik)`.
    pub chi2: f64,
    pub linear_predictor: Vec<f64>,
    /// Inverse of the negative Hessian at `beta`; `None` if it is singular.
    #[serde(skip)]
    pub covariance: Option<Array2<f64>>,
    /// Score at `beta`.
    pub score: Vec<f64>,
    pub n: usize,
    pub n_events: usize,
    pub iterations: usize,
    pub converged: bool,
    pub ties: TieMethod,
}

impl CoxFit {
    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[[i, i]].sqrt()).collect())
    }
}

/// Event times with the subjects failing at each, in decreasing time order.
#[derive(Debug)]
struct EventGroup {
    time: f64,
    members: Vec<usize>,
}

/// β-independent bookkeeping for repeated likelihood evaluation.
struct CoxProblem<'a> {
    outcomes: &'a [SurvivalRecord],
    z: ArrayView2<'a, f64>,
    ties: TieMethod,
    by_exit: Vec<usize>,
    by_entry: Vec<usize>,
    groups: Vec<EventGroup>,
}

struct Evaluation {
    loglik: f64,
    score: Array1<f64>,
    hessian: Array2<f64>,
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

impl<'a> CoxProblem<'a> {
    fn new(
        outcomes: &'a [SurvivalRecord],
        covariates: &'a CovariateMatrix,
        ties: TieMethod,
    ) -> Result<Self, CoxError> {
        let z = covariates.values();
        if z.nrows() != outcomes.len() {
            return Err(CoxError::Dimension {
                outcomes: outcomes.len(),
                rows: z.nrows(),
                beta: z.ncols(),
                cols: z.ncols(),
            });
        }
        let n = outcomes.len();
        let mut by_exit: Vec<usize> = (0..n).collect();
        by_exit.sort_by(|&a, &b| desc(outcomes[a].exit, outcomes[b].exit).then(a.cmp(&b)));
        let mut by_entry: Vec<usize> = (0..n).collect();
        by_entry.sort_by(|&a, &b| desc(outcomes[a].entry, outcomes[b].entry).then(a.cmp(&b)));

        let mut groups: Vec<EventGroup> = Vec::new();
        for &i in by_exit.iter().filter(|&&i| outcomes[i].event) {
            let t = outcomes[i].exit;
            match groups.last_mut() {
                Some(g) if g.time == t => g.members.push(i),
                _ => groups.push(EventGroup {
                    time: t,
                    members: vec![i],
                }),
            }
        }
        if groups.is_empty() {
            return Err(CoxError::NoEvents);
        }
        Ok(Self {
            outcomes,
            z,
            ties,
            by_exit,
            by_entry,
            groups,
        })
    }

    fn q(&self) -> usize {
        self.z.ncols()
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        self.z
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(beta).map(|(z, b)| z * b).sum())
            .collect()
    }

    /// Log-likelihood, and when `derivatives` is set, score and Hessian.
    fn evaluate(&self, beta: &[f64], derivatives: bool) -> Evaluation {
        let q = self.q();
        let n = self.outcomes.len();
        let eta = self.linear_predictor(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; q];
        let mut s2 = vec![0.0; q * q];
        let mut in_risk = vec![false; n];

        let mut loglik = 0.0;
        let mut score = Array1::<f64>::zeros(q);
        let mut hessian = Array2::<f64>::zeros((q, q));

        let z = &self.z;
        let accumulate = |sign: f64, i: usize, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
            let wi = sign * w[i];
            *s0 += wi;
            if derivatives {
                let zi = z.row(i);
                for a in 0..q {
                    let wa = wi * zi[a];
                    s1[a] += wa;
                    for b in 0..=a {
                        s2[a * q + b] += wa * zi[b];
                    }
                }
            }
        };

        let mut pe = 0;
        let mut pr = 0;
        let mut d_s1 = vec![0.0; q];
        let mut d_s2 = vec![0.0; q * q];
        let mut mean = vec![0.0; q];

        for g in &self.groups {
            let t = g.time;
            while pe < n && self.outcomes[self.by_exit[pe]].exit >= t {
                let i = self.by_exit[pe];
                pe += 1;
                // entered at or after t: never at risk from here on
                if self.outcomes[i].entry >= t {
                    continue;
                }
                accumulate(1.0, i, &mut s0, &mut s1, &mut s2);
                in_risk[i] = true;
            }
            while pr < n && self.outcomes[self.by_entry[pr]].entry >= t {
                let i = self.by_entry[pr];
                pr += 1;
                if in_risk[i] {
                    accumulate(-1.0, i, &mut s0, &mut s1, &mut s2);
                    in_risk[i] = false;
                }
            }

            let d = g.members.len();
            let mut d_s0 = 0.0;
            d_s1.iter_mut().for_each(|v| *v = 0.0);
            d_s2.iter_mut().for_each(|v| *v = 0.0);
            for &i in &g.members {
                loglik += eta[i] - shift;
                if derivatives {
                    for a in 0..q {
                        score[a] += z[[i, a]];
                    }
                }
                accumulate(1.0, i, &mut d_s0, &mut d_s1, &mut d_s2);
            }

            let steps: Box<dyn Iterator<Item = (f64, f64)>> = match self.ties {
                TieMethod::Breslow => Box::new(std::iter::once((0.0, d as f64))),
                TieMethod::Efron => Box::new((0..d).map(move |l| (l as f64 / d as f64, 1.0))),
            };
            for (frac, mult) in steps {
                let den = s0 - frac * d_s0;
                loglik -= mult * den.ln();
                if derivatives {
                    for a in 0..q {
                        mean[a] = (s1[a] - frac * d_s1[a]) / den;
                        score[a] -= mult * mean[a];
                    }
                    for a in 0..q {
                        for b in 0..=a {
                            let second = (s2[a * q + b] - frac * d_s2[a * q + b]) / den;
                            hessian[[a, b]] -= mult * (second - mean[a] * mean[b]);
                        }
                    }
                }
            }
        }

        for a in 0..q {
            for b in 0..a {
                hessian[[b, a]] = hessian[[a, b]];
            }
        }
        Evaluation {
            loglik,
            score,
            hessian,
        }
    }

    fn check_beta(&self, beta: &[f64]) -> Result<(), CoxError> {
        if beta.len() != self.q() {
            return Err(CoxError::Dimension {
                outcomes: self.outcomes.len(),
                rows: self.z.nrows(),
                beta: beta.len(),
                cols: self.q(),
            });
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(CoxError::NonFinite);
        }
        Ok(())
    }
}

/// Exact partial log-likelihood at `beta` under the chosen tie method.
pub fn partial_loglik(
    beta: &[f64],
    outcomes: &[SurvivalRecord],
    covariates: &CovariateMatrix,
    ties: TieMethod,
) -> Result<f64, CoxError> {
    let problem = CoxProblem::new(outcomes, covariates, ties)?;
    problem.check_beta(beta)?;
    Ok(problem.evaluate(beta, false).loglik)
}

/// Analytic score vector and Hessian of [`partial_loglik`].
pub fn score_and_hessian(
    beta: &[f64],
    outcomes: &[SurvivalRecord],
    covariates: &CovariateMatrix,
    ties: TieMethod,
) -> Result<(Array1<f64>, Array2<f64>), CoxError> {
    let problem = CoxProblem::new(outcomes, covariates, ties)?;
    problem.check_beta(beta)?;
    let ev = problem.evaluate(beta, true);
    Ok((ev.score, ev.hessian))
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn column_sd(z: ArrayView2<'_, f64>, j: usize) -> f64 {
    let col = z.column(j);
    let n = col.len() as f64;
    let mean = col.sum() / n;
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn assemble(
    problem: &CoxProblem<'_>,
    beta: Vec<f64>,
    ev: &Evaluation,
    null_loglik: f64,
    iterations: usize,
    converged: bool,
) -> CoxFit {
    let covariance = Cholesky::factor(&(-&ev.hessian)).map(|c| c.inverse());
    CoxFit {
        linear_predictor: problem.linear_predictor(&beta),
        beta,
        loglik: ev.loglik,
        null_loglik,
        chi2: 2.0 * (ev.loglik - null_loglik),
        covariance,
        score: ev.score.to_vec(),
        n: problem.outcomes.len(),
        n_events: problem.outcomes.iter().filter(|r| r.event).count(),
        iterations,
        converged,
        ties: problem.ties,
    }
}

/// Fits the Cox model by Newton–Raphson from β = 0 with step halving.
///
/// A run that exhausts `max_iter` comes back as `Ok` with `converged = false`;
/// Extra full Newton steps once the likelihood has flattened out, kept only
/// while they shrink the score. Makes the estimate independent of the
/// iteration path to near machine precision.
fn polish(problem: &CoxProblem<'_>, beta: &mut Vec<f64>, ev: &mut Evaluation, grad_tol: f64) {
    for _ in 0..POLISH_STEPS {
        let gmax = max_abs(&ev.score);
        if gmax < grad_tol {
            return;
        }
        let Some(chol) = Cholesky::factor(&(-&ev.hessian)) else {
            return;
        };
        let delta = chol.solve(&ev.score);
        let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let cev = problem.evaluate(&cand, true);
        let noise = 1e-12 * ev.loglik.abs().max(1.0);
        if !(cev.loglik >= ev.loglik - noise && max_abs(&cev.score) < gmax) {
            return;
        }
        *beta = cand;
        *ev = cev;
    }
}

/// callers decide whether to accept it.
pub fn fit_cox(
    outcomes: &[SurvivalRecord],
    covariates: &CovariateMatrix,
    ties: TieMethod,
    opts: &FitOptions,
) -> Result<CoxFit, CoxError> {
    let problem = CoxProblem::new(outcomes, covariates, ties)?;
    let q = problem.q();
    if q == 0 {
        return Err(CoxError::EmptyDesign);
    }
    if let Some(j) = covariates.constant_column() {
        return Err(CoxError::Singular { column: Some(j) });
    }

    let mut beta = vec![0.0; q];
    let mut ev = problem.evaluate(&beta, true);
    let null_loglik = ev.loglik;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let gmax = max_abs(&ev.score);
        if gmax < opts.grad_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let info = -&ev.hessian;
        let chol = Cholesky::factor(&info).ok_or(CoxError::Singular { column: None })?;
        let delta = chol.solve(&ev.score);
        // quadratic-model estimate of the remaining gain in loglik
        let predicted_gain = 0.5 * ev.score.iter().zip(&delta).map(|(g, d)| g * d).sum::<f64>();
        iterations += 1;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let cev = problem.evaluate(&cand, true);
            if cev.loglik.is_finite() && cev.loglik >= ev.loglik {
                accepted = Some((cand, cev));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cev)) = accepted else {
            // no ascent left at machine precision
            converged = gmax < CONVERGED_SCORE_BOUND
                || predicted_gain <= opts.loglik_rel_tol * ev.loglik.abs();
            break;
        };
        let change = (cev.loglik - ev.loglik).abs();
        let rel = if change == 0.0 {
            0.0
        } else {
            change / cev.loglik.abs()
        };
        beta = cand;
        ev = cev;
        if let Some(j) = beta.iter().position(|b| b.abs() > opts.divergence_bound) {
            return Err(CoxError::MonotoneLikelihood { coefficient: j });
        }
        if rel < opts.loglik_rel_tol && max_abs(&ev.score) < CONVERGED_SCORE_BOUND {
            converged = true;
            break;
        }
    }

    if converged {
        polish(&problem, &mut beta, &mut ev, opts.grad_tol);
    }

    if converged {
        // The partial likelihood is concave: if pushing a coefficient far
        // along its own sign does not lower it, the supremum is at infinity.
        for j in 0..q {
            if beta[j] == 0.0 {
                continue;
            }
            let sd = column_sd(problem.z, j);
            let mut probe = beta.clone();
            probe[j] += beta[j].signum() * MONOTONE_PROBE_SD / sd;
            let lp = problem.evaluate(&probe, false).loglik;
            if lp.is_finite() && lp >= ev.loglik - 1e-8 {
                return Err(CoxError::MonotoneLikelihood { coefficient: j });
            }
        }
        if Cholesky::factor(&(-&ev.hessian)).is_none() {
            return Err(CoxError::Singular { column: None });
        }
    }

    Ok(assemble(
        &problem,
        beta,
        &ev,
        null_loglik,
        iterations,
        converged,
    ))
}

/// Evaluates the model at a fixed coefficient vector without optimizing.
///
/// With `beta = 0` this is the null model; the result is marked converged
/// because there is nothing left to estimate.
pub fn fit_fixed(
    beta: &[f64],
    outcomes: &[SurvivalRecord],
    covariates: &CovariateMatrix,
    ties: TieMethod,
) -> Result<CoxFit, CoxError> {
    let problem = CoxProblem::new(outcomes, covariates, ties)?;
    problem.check_beta(beta)?;
    let null_loglik = problem.evaluate(&vec![0.0; problem.q()], false).loglik;
    let ev = problem.evaluate(beta, true);
    Ok(assemble(&problem, beta.to_vec(), &ev, null_loglik, 0, true))
}
