//! Survival outcomes, covariate matrices and the mediation dataset that ties
//! them together, plus structural validation.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Largest number of mediators the pipeline supports.
pub const MAX_MEDIATORS: usize = 10;

/// One subject's follow-up window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalRecord {
    /// Left-truncation time; 0 when the subject is observed from the origin.
    pub entry: f64,
    /// Event or censoring time.
    pub exit: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(entry: f64, exit: f64, event: bool) -> Self {
        Self { entry, exit, event }
    }

    /// Record observed from time 0.
    pub fn untruncated(exit: f64, event: bool) -> Self {
        Self::new(0.0, exit, event)
    }

    /// Whether the subject is in the risk set at time `t`.
    #[inline]
    pub fn at_risk(&self, t: f64) -> bool {
        self.entry < t && t <= self.exit
    }
}

/// A named n×q real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    values: Array2<f64>,
    names: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("covariate matrix has {columns} columns but {names} names")]
    NameCount { columns: usize, names: usize },
    #[error("dataset failed validation: {0}")]
    Invalid(ViolationList),
    #[error("column index {index} out of range for {p} columns")]
    ColumnIndex { index: usize, p: usize },
}

impl CovariateMatrix {
    pub fn new(values: Array2<f64>, names: Vec<String>) -> Result<Self, DataError> {
        if values.ncols() != names.len() {
            return Err(DataError::NameCount {
                columns: values.ncols(),
                names: names.len(),
            });
        }
        Ok(Self { values, names })
    }

    /// Builds a matrix with generated names `prefix1..prefixq`.
    pub fn with_prefix(values: Array2<f64>, prefix: &str) -> Self {
        let names = (1..=values.ncols())
            .map(|j| format!("{prefix}{j}"))
            .collect();
        Self { values, names }
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>, name: &str) -> Self {
        let n = values.len();
        let values = Array2::from_shape_vec((n, 1), values).expect("n×1 shape");
        Self {
            values,
            names: vec![name.to_string()],
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &CovariateMatrix) -> CovariateMatrix {
        let values = concatenate(Axis(1), &[self.values.view(), other.values.view()])
            .expect("row counts agree");
        let names = self.names.iter().chain(&other.names).cloned().collect();
        CovariateMatrix { values, names }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Result<CovariateMatrix, DataError> {
        if let Some(&bad) = idx.iter().find(|&&j| j >= self.ncols()) {
            return Err(DataError::ColumnIndex {
                index: bad,
                p: self.ncols(),
            });
        }
        let values = self.values.select(Axis(1), idx);
        let names = idx.iter().map(|&j| self.names[j].clone()).collect();
        Ok(CovariateMatrix { values, names })
    }

    pub fn select_rows(&self, idx: &[usize]) -> CovariateMatrix {
        CovariateMatrix {
            values: self.values.select(Axis(0), idx),
            names: self.names.clone(),
        }
    }

    /// Index of the first column whose entries are all equal, if any.
    pub fn constant_column(&self) -> Option<usize> {
        (0..self.ncols()).find(|&j| {
            let col = self.values.column(j);
            let first = col[0];
            col.iter().all(|&v| v == first)
        })
    }
}

/// Exposure(s) X, mediators M and survival outcomes T for n subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct MediationDataset {
    outcomes: Vec<SurvivalRecord>,
    exposure: CovariateMatrix,
    mediators: CovariateMatrix,
}

impl MediationDataset {
    /// Assembles a dataset without checking it; see [`validate_dataset`].
    pub fn new(
        outcomes: Vec<SurvivalRecord>,
        exposure: CovariateMatrix,
        mediators: CovariateMatrix,
    ) -> Self {
        Self {
            outcomes,
            exposure,
            mediators,
        }
    }

    /// Assembles a dataset and rejects it when any invariant is violated.
    pub fn validated(
        outcomes: Vec<SurvivalRecord>,
        exposure: CovariateMatrix,
        mediators: CovariateMatrix,
    ) -> Result<Self, DataError> {
        let ds = Self::new(outcomes, exposure, mediators);
        let report = validate_dataset(&ds);
        if report.is_ok() {
            Ok(ds)
        } else {
            Err(DataError::Invalid(ViolationList(report.violations)))
        }
    }

    pub fn outcomes(&self) -> &[SurvivalRecord] {
        &self.outcomes
    }

    pub fn exposure(&self) -> &CovariateMatrix {
        &self.exposure
    }

    pub fn mediators(&self) -> &CovariateMatrix {
        &self.mediators
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of exposure columns q_x.
    pub fn q_x(&self) -> usize {
        self.exposure.ncols()
    }

    /// Number of mediators p.
    pub fn p(&self) -> usize {
        self.mediators.ncols()
    }

    pub fn n_events(&self) -> usize {
        self.outcomes.iter().filter(|r| r.event).count()
    }

    pub fn censor_rate(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.n() as f64
    }

    /// Joint design `(X, M)`.
    pub fn joint_covariates(&self) -> CovariateMatrix {
        self.exposure.hstack(&self.mediators)
    }

    /// Same subjects, restricted to the listed mediator columns.
    pub fn with_mediators(&self, idx: &[usize]) -> Result<MediationDataset, DataError> {
        Ok(MediationDataset {
            outcomes: self.outcomes.clone(),
            exposure: self.exposure.clone(),
            mediators: self.mediators.select_columns(idx)?,
        })
    }

    /// Same subjects with one more mediator column appended.
    pub fn with_extra_mediator(&self, values: Vec<f64>, name: &str) -> MediationDataset {
        let extra = CovariateMatrix::column(values, name);
        MediationDataset {
            outcomes: self.outcomes.clone(),
            exposure: self.exposure.clone(),
            mediators: self.mediators.hstack(&extra),
        }
    }

    /// Subset (or resample, when indices repeat) of subjects.
    pub fn take_rows(&self, idx: &[usize]) -> MediationDataset {
        MediationDataset {
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            exposure: self.exposure.select_rows(idx),
            mediators: self.mediators.select_rows(idx),
        }
    }
}

/// Which invariant a row (or the dataset as a whole) broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rule {
    ExitAfterEntry,
    NonNegativeEntry,
    FiniteTimes,
    FiniteCovariates,
    RowCount,
    AtLeastOneMediator,
    AtMostTenMediators,
    AtLeastOneExposure,
    MoreRowsThanCoefficients,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ExitAfterEntry => "exit > entry",
            Rule::NonNegativeEntry => "entry >= 0",
            Rule::FiniteTimes => "finite times",
            Rule::FiniteCovariates => "finite covariates",
            Rule::RowCount => "equal row counts",
            Rule::AtLeastOneMediator => "p >= 1",
            Rule::AtMostTenMediators => "p ≤ 10",
            Rule::AtLeastOneExposure => "q_x >= 1",
            Rule::MoreRowsThanCoefficients => "n >= q + 1",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Offending row, or `None` for dataset-level rules.
    pub row: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {r}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationList(pub Vec<Violation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 5;
        for (i, v) in self.0.iter().take(SHOWN).enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        if self.0.len() > SHOWN {
            write!(f, "; and {} more", self.0.len() - SHOWN)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
    pub n: usize,
    pub n_events: usize,
    pub censor_rate: f64,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Checks every structural invariant of a dataset. Violations are collected,
/// not raised.
pub fn validate_dataset(ds: &MediationDataset) -> ValidationResult {
    let mut violations = Vec::new();
    let n = ds.n();

    for (i, r) in ds.outcomes.iter().enumerate() {
        if !r.entry.is_finite() || !r.exit.is_finite() {
            violations.push(Violation {
                row: Some(i),
                rule: Rule::FiniteTimes,
            });
            continue;
        }
        if r.entry < 0.0 {
            violations.push(Violation {
                row: Some(i),
                rule: Rule::NonNegativeEntry,
            });
        }
        if r.exit <= r.entry {
            violations.push(Violation {
                row: Some(i),
                rule: Rule::ExitAfterEntry,
            });
        }
    }

    if ds.exposure.nrows() != n || ds.mediators.nrows() != n {
        violations.push(Violation {
            row: None,
            rule: Rule::RowCount,
        });
    }

    for m in [&ds.exposure, &ds.mediators] {
        for (i, row) in m.values.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                violations.push(Violation {
                    row: Some(i),
                    rule: Rule::FiniteCovariates,
                });
            }
        }
    }

    let p = ds.p();
    if p == 0 {
        violations.push(Violation {
            row: None,
            rule: Rule::AtLeastOneMediator,
        });
    }
    if p > MAX_MEDIATORS {
        violations.push(Violation {
            row: None,
            rule: Rule::AtMostTenMediators,
        });
    }
    if ds.q_x() == 0 {
        violations.push(Violation {
            row: None,
            rule: Rule::AtLeastOneExposure,
        });
    }
    // the joint (X, M) fit has the most coefficients
    if n < ds.q_x() + p + 1 {
        violations.push(Violation {
            row: None,
            rule: Rule::MoreRowsThanCoefficients,
        });
    }

    let n_events = ds.n_events();
    ValidationResult {
        violations,
        n,
        n_events,
        censor_rate: ds.censor_rate(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn small(n: usize, p: usize) -> MediationDataset {
        let outcomes = (0..n)
            .map(|i| SurvivalRecord::untruncated(1.0 + i as f64, i % 2 == 0))
            .collect();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let m = Array2::from_shape_fn((n, p), |(i, j)| (i * (j + 1)) as f64);
        MediationDataset::new(
            outcomes,
            CovariateMatrix::with_prefix(x, "x"),
            CovariateMatrix::with_prefix(m, "m"),
        )
    }

    #[test]
    fn degenerate_time_flagged_at_row() {
        let mut ds = small(6, 1);
        ds.outcomes[3] = SurvivalRecord::new(2.0, 2.0, true);
        let res = validate_dataset(&ds);
        assert!(!res.is_ok());
        assert_eq!(
            res.violations,
            vec![Violation {
                row: Some(3),
                rule: Rule::ExitAfterEntry
            }]
        );
        assert_eq!(res.violations[0].rule.as_str(), "exit > entry");
    }

    #[test]
    fn censor_rate_reported() {
        let n = 1523;
        let outcomes = (0..n)
            .map(|i| SurvivalRecord::untruncated(1.0 + i as f64, i < 209))
            .collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i + j) % 2) as f64);
        let m = Array2::from_shape_fn((n, 6), |(i, j)| (i as f64).sin() + j as f64);
        let ds = MediationDataset::new(
            outcomes,
            CovariateMatrix::with_prefix(x, "x"),
            CovariateMatrix::with_prefix(m, "m"),
        );
        let res = validate_dataset(&ds);
        assert!(res.is_ok());
        assert_eq!(res.n_events, 209);
        assert!((res.censor_rate - 0.863).abs() < 5e-4);
    }

    #[test]
    fn eleven_mediators_rejected() {
        let res = validate_dataset(&small(40, 11));
        assert!(res.has(Rule::AtMostTenMediators));
        assert_eq!(Rule::AtMostTenMediators.as_str(), "p ≤ 10");
        assert!(validate_dataset(&small(40, 10)).is_ok());
    }

    #[test]
    fn too_few_rows() {
        let res = validate_dataset(&small(3, 2));
        assert!(res.has(Rule::MoreRowsThanCoefficients));
    }

    #[test]
    fn validated_constructor_reports() {
        let ds = small(5, 1);
        let mut outcomes = ds.outcomes().to_vec();
        outcomes[0].entry = -1.0;
        let err =
            MediationDataset::validated(outcomes, ds.exposure().clone(), ds.mediators().clone())
                .unwrap_err();
        assert!(err.to_string().contains("entry >= 0"));
    }

    #[test]
    fn row_subset_and_columns() {
        let ds = small(6, 3);
        let sub = ds.take_rows(&[0, 0, 5]);
        assert_eq!(sub.n(), 3);
        assert_eq!(sub.mediators().values()[[2, 2]], 15.0);
        let one = ds.with_mediators(&[2]).unwrap();
        assert_eq!(one.p(), 1);
        assert_eq!(one.mediators().names(), &["m3".to_string()]);
        assert!(ds.with_mediators(&[3]).is_err());
    }

    #[test]
    fn constant_column_detection() {
        let m = CovariateMatrix::with_prefix(
            Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap(),
            "z",
        );
        assert_eq!(m.constant_column(), Some(1));
    }

    #[derive(Debug, Clone)]
    enum Corruption {
        EqualTimes(usize),
        NegativeEntry(usize),
        NanCovariate(usize),
        DropExposureRow,
        TooManyMediators,
    }

    fn corruption() -> impl Strategy<Value = Corruption> {
        prop_oneof![
            (0usize..30).prop_map(Corruption::EqualTimes),
            (0usize..30).prop_map(Corruption::NegativeEntry),
            (0usize..30).prop_map(Corruption::NanCovariate),
            Just(Corruption::DropExposureRow),
            Just(Corruption::TooManyMediators),
        ]
    }

    proptest! {
        #[test]
        fn generated_violations_detected(c in corruption(), p in 1usize..=4) {
            let mut ds = small(30, p);
            let expected = match c {
                Corruption::EqualTimes(i) => {
                    ds.outcomes[i].exit = ds.outcomes[i].entry;
                    (Some(i), Rule::ExitAfterEntry)
                }
                Corruption::NegativeEntry(i) => {
                    ds.outcomes[i].entry = -0.5;
                    (Some(i), Rule::NonNegativeEntry)
                }
                Corruption::NanCovariate(i) => {
                    ds.mediators.values[[i, 0]] = f64::NAN;
                    (Some(i), Rule::FiniteCovariates)
                }
                Corruption::DropExposureRow => {
                    ds.exposure = ds.exposure.select_rows(&(0..29).collect::<Vec<_>>());
                    (None, Rule::RowCount)
                }
                Corruption::TooManyMediators => {
                    ds = small(30, 11);
                    (None, Rule::AtMostTenMediators)
                }
            };
            let res = validate_dataset(&ds);
            prop_assert!(!res.is_ok());
            prop_assert!(res.violations.iter().any(|v| v.row == expected.0 && v.rule == expected.1));
        }

        #[test]
        fn clean_data_passes(n in 8usize..60, p in 1usize..=10) {
            prop_assume!(n > p + 1);
            prop_assert!(validate_dataset(&small(n, p)).is_ok());
        }
    }
}
