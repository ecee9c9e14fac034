#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use survmed::data::{CovariateMatrix, MediationDataset, SurvivalRecord};
use survmed::rng::substream;

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

pub fn matrix(cols: &[Vec<f64>], prefix: &str) -> CovariateMatrix {
    let n = cols[0].len();
    let arr = Array2::from_shape_fn((n, cols.len()), |(i, j)| cols[j][i]);
    CovariateMatrix::with_prefix(arr, prefix)
}

/// Small random survival data set with `q` covariates. Times are rounded to
/// a coarse grid when `ties` is set, and entry times are drawn when
/// `truncated` is set.
pub fn random_small<R: Rng>(
    rng: &mut R,
    n: usize,
    q: usize,
    ties: bool,
    truncated: bool,
) -> (Vec<SurvivalRecord>, CovariateMatrix) {
    loop {
        let cols: Vec<Vec<f64>> = (0..q)
            .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let out: Vec<SurvivalRecord> = (0..n)
            .map(|_| {
                let entry = if truncated {
                    rng.random_range(0.0..1.0)
                } else {
                    0.0
                };
                let mut len: f64 = rng.random_range(0.05..3.0);
                if ties {
                    len = (len * 2.0).ceil() / 2.0;
                }
                SurvivalRecord::new(entry, entry + len, rng.random_bool(0.75))
            })
            .collect();
        if out.iter().any(|r| r.event) {
            return (out, matrix(&cols, "z"));
        }
    }
}

/// Synthetic cohort shaped like a prospective heart study: three binary
/// exposures, six correlated mediators, age as the time scale with delayed
/// entry, and administrative end of follow-up chosen to give roughly
/// `censor` censoring.
pub fn cohort_dataset(n: usize, censor: f64, seed: u64) -> MediationDataset {
    let mut rng = substream(seed, 0);
    let gamma = [0.9, 0.7, 0.5];
    let a = [
        [0.6, 0.3, 0.0],
        [0.4, 0.5, 0.2],
        [-0.3, 0.4, 0.3],
        [0.5, 0.0, -0.4],
        [0.2, 0.6, 0.1],
        [0.0, 0.3, 0.5],
    ];
    let b = [0.25, 0.15, 0.1, 0.2, -0.1, 0.15];
    let prevalence = [0.45, 0.35, 0.55];

    let mut x = vec![[0.0; 3]; n];
    let mut m = vec![[0.0; 6]; n];
    let mut entry = vec![0.0f64; n];
    let mut event_age = vec![0.0; n];
    for i in 0..n {
        for k in 0..3 {
            x[i][k] = if rng.random_bool(prevalence[k]) {
                1.0
            } else {
                0.0
            };
        }
        // shared factor induces correlation among mediators
        let shared: f64 = StandardNormal.sample(&mut rng);
        for j in 0..6 {
            let own: f64 = StandardNormal.sample(&mut rng);
            m[i][j] = (0..3).map(|k| a[j][k] * x[i][k]).sum::<f64>() + 0.6 * shared + 0.8 * own;
        }
        let lp: f64 = (0..3).map(|k| gamma[k] * x[i][k]).sum::<f64>()
            + (0..6).map(|j| b[j] * m[i][j]).sum::<f64>();
        entry[i] = rng.random_range(30.0..60.0);
        // Weibull hazard in age, conditioned on survival to entry
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let rate = (-14.0f64 + lp).exp();
        event_age[i] = (entry[i].powi(3) - u.ln() / rate).cbrt();
    }

    let censor_share =
        |tau: f64| (0..n).filter(|&i| event_age[i] > entry[i] + tau).count() as f64 / n as f64;
    let (mut lo, mut hi) = (0.01f64, 500.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if censor_share(mid) > censor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);

    let outcomes = (0..n)
        .map(|i| {
            let end = entry[i] + tau;
            SurvivalRecord::new(entry[i], event_age[i].min(end), event_age[i] <= end)
        })
        .collect();
    let xs = Array2::from_shape_fn((n, 3), |(i, k)| x[i][k]);
    let ms = Array2::from_shape_fn((n, 6), |(i, j)| m[i][j]);
    let names_x = ["gender", "smoking", "drinking"].map(String::from).to_vec();
    let names_m = ["bmi", "sbp", "dbp", "hdl", "ldl", "tc"]
        .map(String::from)
        .to_vec();
    MediationDataset::validated(
        outcomes,
        CovariateMatrix::new(xs, names_x).unwrap(),
        CovariateMatrix::new(ms, names_m).unwrap(),
    )
    .unwrap()
}

/// Replaces every exit time with `f(exit)` and every entry with `f(entry)`.
pub fn map_times(ds: &MediationDataset, f: impl Fn(f64) -> f64) -> MediationDataset {
    let outcomes = ds
        .outcomes()
        .iter()
        .map(|r| SurvivalRecord::new(f(r.entry), f(r.exit), r.event))
        .collect();
    MediationDataset::new(outcomes, ds.exposure().clone(), ds.mediators().clone())
}

use survmed::cox::{fit_cox, fit_fixed, partial_loglik, score_and_hessian, FitOptions, TieMethod};
use survmed::mediation::{
    fit_mediator_regressions, report_from_fits, MediationOptions, MediationReport, ThreeFits,
};
use survmed::r2::{compute_all, Measure, R2Options};

/// Compares fitted β with golden-section search of the partial likelihood on
/// `count` random one-covariate data sets (n ≤ 8) that have a finite
/// maximiser. Returns the largest absolute discrepancy.
pub fn golden_section_discrepancy(count: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, 0);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < count {
        let n = rng.random_range(3..=8);
        let ties = rng.random_bool(0.5);
        let truncated = rng.random_bool(0.3);
        let (out, z) = random_small(&mut rng, n, 1, ties, truncated);
        let method = if rng.random_bool(0.5) {
            TieMethod::Efron
        } else {
            TieMethod::Breslow
        };
        let f = |b: f64| partial_loglik(&[b], &out, &z, method).unwrap_or(f64::NEG_INFINITY);
        let oracle = golden_max(f, -10.0, 10.0, 1e-10);
        if oracle.abs() > 9.9 {
            // supremum at infinity or outside the bracket
            continue;
        }
        let Ok(fit) = fit_cox(&out, &z, method, &FitOptions::default()) else {
            continue;
        };
        assert!(fit.converged);
        worst = worst.max((fit.beta[0] - oracle).abs());
        used += 1;
    }
    worst
}

/// Largest relative discrepancy between the analytic score and central
/// differences (h = 1e-5) over `count` random (β, data set) pairs.
pub fn finite_difference_discrepancy(count: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, 1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..count {
        let q = rng.random_range(1..=3);
        let n = rng.random_range(5..=20);
        let ties = rng.random_bool(0.5);
        let truncated = rng.random_bool(0.3);
        let (out, z) = random_small(&mut rng, n, q, ties, truncated);
        let method = if rng.random_bool(0.5) {
            TieMethod::Efron
        } else {
            TieMethod::Breslow
        };
        let beta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (score, _) = score_and_hessian(&beta, &out, &z, method).unwrap();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..q {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (partial_loglik(&up, &out, &z, method).unwrap()
                - partial_loglik(&down, &out, &z, method).unwrap())
                / (2.0 * h);
            err = err.max((fd - score[j]).abs());
            scale = scale.max(score[j].abs());
        }
        worst = worst.max(err / scale.max(1.0));
    }
    worst
}

/// Every scalar in a report, in a fixed order.
pub fn scalars(r: &MediationReport) -> Vec<f64> {
    let mut v = Vec::new();
    for m in &r.measures {
        v.extend([
            m.r2_tx,
            m.r2_tm,
            m.r2_txm,
            m.r2_med,
            m.sos.unwrap_or(f64::NAN),
        ]);
    }
    v.extend(r.product_proportion);
    v.extend(r.difference_proportion);
    v.extend(&r.coefficients.c);
    v.extend(&r.coefficients.r);
    v
}

/// Single-mediator quantities built directly from three fits and the five
/// R² formulas, without going through the multi-mediator pipeline.
pub fn single_mediator_by_hand(ds: &MediationDataset) -> Vec<f64> {
    let fit = |z: &CovariateMatrix| {
        let f = fit_cox(ds.outcomes(), z, TieMethod::Efron, &FitOptions::default()).unwrap();
        let r2 = compute_all(&f, z, &R2Options::default()).unwrap();
        (f, r2)
    };
    let x = ds.exposure();
    let m = ds.mediators();
    let (fx, rx) = fit(x);
    let (_, rm) = fit(m);
    let (fxm, rxm) = fit(&x.hstack(m));
    let mut v = Vec::new();
    for meas in Measure::ALL {
        let (tx, tm, txm) = (rx.get(meas), rm.get(meas), rxm.get(meas));
        let med = tm + tx - txm;
        v.extend([tx, tm, txm, med, med / tx]);
    }
    // OLS slope of M on X
    let xs = x.values().column(0).to_vec();
    let ms = m.values().column(0).to_vec();
    let n = xs.len() as f64;
    let (mx, mm) = (xs.iter().sum::<f64>() / n, ms.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ms).map(|(a, b)| (a - mx) * (b - mm)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    let a = sxy / sxx;
    let (c, r, b) = (fx.beta[0], fxm.beta[0], fxm.beta[1]);
    v.extend([(a * b - c).exp(), (-r).exp(), c, r]);
    v
}

pub fn null_report(ds: &MediationDataset) -> MediationReport {
    let fixed = |z: &CovariateMatrix| {
        fit_fixed(&vec![0.0; z.ncols()], ds.outcomes(), z, TieMethod::Efron).unwrap()
    };
    let fits = ThreeFits {
        exposure: fixed(ds.exposure()),
        mediators: fixed(ds.mediators()),
        joint: fixed(&ds.joint_covariates()),
    };
    let reg = fit_mediator_regressions(ds).unwrap();
    report_from_fits(ds, &fits, reg, &MediationOptions::default()).unwrap()
}

/// Kolmogorov–Smirnov distance from the unit exponential.
pub fn ks_exponential(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
