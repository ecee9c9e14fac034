//! CSV ingestion with complete-case filtering, and the matching writer.

use crate::data::{CovariateMatrix, DataError, MediationDataset, SurvivalRecord};
use ndarray::Array2;
use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Maps column roles to header names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnMapping {
    pub time: String,
    pub event: String,
    pub entry: Option<String>,
    pub exposures: Vec<String>,
    pub mediators: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{0}' is not present in the header")]
    UnmappedColumn(String),
    #[error("row {row}, column '{column}': cannot parse '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("no usable rows after dropping incomplete records")]
    NoUsableRows,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

/// A parsed dataset with its complete-case bookkeeping.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub dataset: MediationDataset,
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_event(cell: &str) -> Option<bool> {
    match cell.trim() {
        "1" => Some(true),
        "0" => Some(false),
        s if s.eq_ignore_ascii_case("true") => Some(true),
        s if s.eq_ignore_ascii_case("false") => Some(false),
        _ => None,
    }
}

impl ColumnMapping {
    fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.time.as_str(), self.event.as_str()];
        if let Some(e) = &self.entry {
            cols.push(e);
        }
        cols.extend(self.exposures.iter().map(String::as_str));
        cols.extend(self.mediators.iter().map(String::as_str));
        cols
    }

    /// Parses the flat `key = value` config format.
    ///
    /// Keys: `time`, `event`, `entry` (optional), `exposures`, `mediators`.
    /// List values are comma separated. `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<ColumnMapping, CsvError> {
        let mut map = ColumnMapping::default();
        let mut seen_time = false;
        let mut seen_event = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CsvError::Config {
                line: lineno + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            let list = || -> Vec<String> {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match key.as_str() {
                "time" | "exit" => {
                    map.time = value.to_string();
                    seen_time = true;
                }
                "event" | "status" => {
                    map.event = value.to_string();
                    seen_event = true;
                }
                "entry" => map.entry = Some(value.to_string()).filter(|s| !s.is_empty()),
                "exposure" | "exposures" => map.exposures = list(),
                "mediator" | "mediators" => map.mediators = list(),
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        let missing = |what: &str| CsvError::Config {
            line: 0,
            message: format!("missing required key '{what}'"),
        };
        if !seen_time || map.time.is_empty() {
            return Err(missing("time"));
        }
        if !seen_event || map.event.is_empty() {
            return Err(missing("event"));
        }
        if map.exposures.is_empty() {
            return Err(missing("exposures"));
        }
        if map.mediators.is_empty() {
            return Err(missing("mediators"));
        }
        Ok(map)
    }
}

/// Reads a CSV with a header row into a validated dataset.
///
/// Rows with any mapped field missing (empty, `NA`, `NaN`) are dropped and
/// counted. Present but unparseable cells are errors.
pub fn read_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<CsvDataset, CsvError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CsvError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: HashMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let col = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| CsvError::UnmappedColumn(name.to_string()))
    };
    for name in mapping.all_columns() {
        col(name)?;
    }
    let time_ix = col(&mapping.time)?;
    let event_ix = col(&mapping.event)?;
    let entry_ix = mapping.entry.as_deref().map(col).transpose()?;
    let x_ix: Vec<usize> = mapping
        .exposures
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;
    let m_ix: Vec<usize> = mapping
        .mediators
        .iter()
        .map(|c| col(c))
        .collect::<Result<_, _>>()?;

    let mut outcomes = Vec::new();
    let mut x_vals = Vec::new();
    let mut m_vals = Vec::new();
    let mut dropped = 0usize;

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // data rows are numbered from 1, after the header
        let row = r + 1;
        let cell = |ix: usize| rec.get(ix).unwrap_or("");
        let mut needed = vec![time_ix, event_ix];
        needed.extend(entry_ix);
        needed.extend(&x_ix);
        needed.extend(&m_ix);
        if needed.iter().any(|&ix| is_missing(cell(ix))) {
            dropped += 1;
            continue;
        }
        let num = |ix: usize, name: &str| -> Result<f64, CsvError> {
            let s = cell(ix);
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CsvError::Parse {
                    row,
                    column: name.to_string(),
                    value: s.to_string(),
                })
        };
        let exit = num(time_ix, &mapping.time)?;
        let event = parse_event(cell(event_ix)).ok_or_else(|| CsvError::Parse {
            row,
            column: mapping.event.clone(),
            value: cell(event_ix).to_string(),
        })?;
        let entry = match (entry_ix, &mapping.entry) {
            (Some(ix), Some(name)) => num(ix, name)?,
            _ => 0.0,
        };
        outcomes.push(SurvivalRecord::new(entry, exit, event));
        for (ix, name) in x_ix.iter().zip(&mapping.exposures) {
            x_vals.push(num(*ix, name)?);
        }
        for (ix, name) in m_ix.iter().zip(&mapping.mediators) {
            m_vals.push(num(*ix, name)?);
        }
    }

    let n = outcomes.len();
    if n == 0 {
        return Err(CsvError::NoUsableRows);
    }
    let exposure = CovariateMatrix::new(
        Array2::from_shape_vec((n, x_ix.len()), x_vals).expect("row-major exposure"),
        mapping.exposures.clone(),
    )?;
    let mediators = CovariateMatrix::new(
        Array2::from_shape_vec((n, m_ix.len()), m_vals).expect("row-major mediators"),
        mapping.mediators.clone(),
    )?;
    let dataset = MediationDataset::validated(outcomes, exposure, mediators)?;
    Ok(CsvDataset {
        dataset,
        dropped_rows: dropped,
    })
}

/// Writes a dataset using the mapping's column names (entry column only when
/// the mapping names one). Floats use the shortest round-trip representation.
pub fn write_csv(
    path: impl AsRef<Path>,
    ds: &MediationDataset,
    mapping: &ColumnMapping,
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![mapping.time.clone(), mapping.event.clone()];
    header.extend(mapping.entry.iter().cloned());
    header.extend(mapping.exposures.iter().cloned());
    header.extend(mapping.mediators.iter().cloned());
    w.write_record(&header)?;
    let x = ds.exposure().values();
    let m = ds.mediators().values();
    for (i, r) in ds.outcomes().iter().enumerate() {
        let mut row = vec![r.exit.to_string(), u8::from(r.event).to_string()];
        if mapping.entry.is_some() {
            row.push(r.entry.to_string());
        }
        row.extend(x.row(i).iter().map(f64::to_string));
        row.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
