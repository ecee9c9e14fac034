//! Replicated simulation runs, real-data analysis, and their table outputs.

use crate::bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapError};
use crate::csv_io::{read_csv, ColumnMapping, CsvError};
use crate::data::{validate_dataset, MediationDataset, ValidationResult};
use crate::mediation::{r2_mediation, MediationError, MediationOptions, MediationReport, Quantity};
use crate::r2::Measure;
use crate::rng::{par_map_indexed, substream};
use crate::sim::{make_scenarios, Family, PreparedScenario, ScenarioConfig, SimError};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Header of every simulation summary CSV.
pub const SUMMARY_HEADER: [&str; 8] = [
    "scenario_id",
    "axis_name",
    "axis_value",
    "quantity",
    "mean",
    "mc_sd",
    "n_replicates",
    "n_failures",
];

pub const CENSOR_RATE: &str = "censor_rate";

/// Stream used for the synthetic random-control mediator.
const RANDOM_CONTROL_STREAM: u64 = 0x5EED_0000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scenario {scenario} unusable: {failures} of {total} replicates failed")]
    Unusable {
        scenario: String,
        failures: usize,
        total: usize,
    },
    #[error("{context}: {source}")]
    Mediation {
        context: String,
        source: MediationError,
    },
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Input(#[from] CsvError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("serializing json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for problems with the input data or output files rather than
    /// with the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Input(_)
                | HarnessError::Io { .. }
                | HarnessError::Csv(_)
                | HarnessError::Json(_)
        ) || matches!(self, HarnessError::Sim(SimError::InvalidConfig(_)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Names of every quantity collected per replicate, in output order.
pub fn simulation_quantities() -> Vec<String> {
    let mut names: Vec<String> = Quantity::headline().iter().map(|q| q.to_string()).collect();
    names.extend(Quantity::components().iter().map(|q| q.to_string()));
    names.push(CENSOR_RATE.to_string());
    names
}

/// Values of [`simulation_quantities`] for one dataset, or `None` when the
/// replicate counts as a failure.
pub fn replicate_values(ds: &MediationDataset, opts: &MediationOptions) -> Option<Vec<f64>> {
    let report = r2_mediation(ds, opts).ok()?;
    let mut v = Vec::new();
    for q in Quantity::headline()
        .into_iter()
        .chain(Quantity::components())
    {
        v.push(report.quantity(q)?);
    }
    v.push(ds.censor_rate());
    Some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityStat {
    pub quantity: String,
    pub mean: f64,
    pub mc_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub scenario_id: String,
    pub axis_name: String,
    pub axis_value: f64,
    pub replications: usize,
    pub n_replicates: usize,
    pub n_failures: usize,
    pub censor_scale: f64,
    pub stats: Vec<QuantityStat>,
}

impl ReplicationSummary {
    pub fn stat(&self, quantity: &str) -> Option<&QuantityStat> {
        self.stats.iter().find(|s| s.quantity == quantity)
    }

    pub fn mean(&self, quantity: &str) -> f64 {
        self.stat(quantity).map_or(f64::NAN, |s| s.mean)
    }

    /// Monte Carlo standard error of the mean.
    pub fn mc_se(&self, quantity: &str) -> f64 {
        self.stat(quantity)
            .map_or(f64::NAN, |s| s.mc_sd / (self.n_replicates as f64).sqrt())
    }
}

/// Mean and sample standard deviation of each quantity over the successful
/// replicates. Returns the stats and the successful count.
pub fn summarize(names: &[String], outcomes: &[Option<Vec<f64>>]) -> (Vec<QuantityStat>, usize) {
    let ok: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let k = ok.len();
    let stats = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mean, mc_sd) = if k == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = ok.iter().map(|v| v[j]).sum::<f64>() / k as f64;
                let sd = if k > 1 {
                    (ok.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
                } else {
                    0.0
                };
                (mean, sd)
            };
            QuantityStat {
                quantity: name.clone(),
                mean,
                mc_sd,
            }
        })
        .collect();
    (stats, k)
}

/// Runs `q` replicates of a scenario and aggregates them. Replicate `i` uses
/// stream `i` of `seed`, so the result does not depend on `threads`.
pub fn run_replications(
    cfg: &ScenarioConfig,
    q: usize,
    seed: u64,
    threads: Option<usize>,
    opts: &MediationOptions,
) -> Result<ReplicationSummary, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let prepared = PreparedScenario::new(cfg)?;
    let outcomes = par_map_indexed(q, threads, |i| {
        replicate_values(&prepared.replicate(seed, i as u64), opts)
    });
    let names = simulation_quantities();
    let (stats, ok) = summarize(&names, &outcomes);
    let failures = q - ok;
    let cfg = &prepared.config;
    if failures * 2 > q {
        return Err(HarnessError::Unusable {
            scenario: cfg.scenario_id.clone(),
            failures,
            total: q,
        });
    }
    let (axis_name, axis_value) = match cfg.family {
        Some(f) => (f.axis_name().to_string(), f.axis_value(cfg)),
        None => ("none".to_string(), 0.0),
    };
    Ok(ReplicationSummary {
        scenario_id: cfg.scenario_id.clone(),
        axis_name,
        axis_value,
        replications: q,
        n_replicates: ok,
        n_failures: failures,
        censor_scale: prepared.censor_scale.0,
        stats,
    })
}

/// Overrides applied to every configuration of a family.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub replications: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub mediation: MediationOptions,
}

/// Runs every configuration of a family.
pub fn run_family(
    family: Family,
    overrides: &RunOptions,
) -> Result<Vec<ReplicationSummary>, HarnessError> {
    run_configs(&make_scenarios(family), overrides)
}

/// Runs a subset of configurations with the same overrides.
pub fn run_configs(
    configs: &[ScenarioConfig],
    overrides: &RunOptions,
) -> Result<Vec<ReplicationSummary>, HarnessError> {
    configs
        .iter()
        .map(|cfg| {
            let mut cfg = cfg.clone();
            if let Some(n) = overrides.n {
                cfg.n = n;
            }
            let q = overrides.replications.unwrap_or(cfg.replications);
            let seed = overrides.seed.unwrap_or(cfg.seed);
            run_replications(&cfg, q, seed, overrides.threads, &overrides.mediation)
        })
        .collect()
}

/// Output file group for a quantity name.
pub fn quantity_group(name: &str) -> &'static str {
    if name.starts_with("sos_") {
        "sos"
    } else if name.starts_with("r2_med_") {
        "r2med"
    } else if name.starts_with("r2_") {
        "components"
    } else {
        "effects"
    }
}

pub const QUANTITY_GROUPS: [&str; 4] = ["sos", "r2med", "effects", "components"];

/// Writes summary rows, restricted to one quantity group when given.
pub fn write_summary_csv<W: std::io::Write>(
    out: W,
    summaries: &[ReplicationSummary],
    group: Option<&str>,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        for st in s
            .stats
            .iter()
            .filter(|st| group.is_none_or(|g| quantity_group(&st.quantity) == g))
        {
            w.write_record([
                s.scenario_id.clone(),
                s.axis_name.clone(),
                s.axis_value.to_string(),
                st.quantity.clone(),
                st.mean.to_string(),
                st.mc_sd.to_string(),
                s.n_replicates.to_string(),
                s.n_failures.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `<family>_<group>.csv` for each quantity group plus
/// `<family>_summary.json`. Returns the paths written.
pub fn write_family_outputs(
    dir: &Path,
    family: Family,
    summaries: &[ReplicationSummary],
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for group in QUANTITY_GROUPS {
        let path = dir.join(format!("{family}_{group}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_summary_csv(file, summaries, Some(group))?;
        written.push(path);
    }
    let path = dir.join(format!("{family}_summary.json"));
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(file, summaries)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub mediation: MediationOptions,
    pub bootstrap: Option<BootstrapConfig>,
    /// Append an independent standard-normal mediator to the one-at-a-time
    /// table.
    pub random_control: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleMediatorResult {
    pub mediator: String,
    pub report: MediationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisResult {
    pub dropped_rows: usize,
    pub validation: ValidationResult,
    /// One single-mediator analysis per mediator (plus the control).
    pub single: Vec<SingleMediatorResult>,
    /// All mediators jointly.
    pub joint: MediationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_failures: Option<usize>,
}

pub const RANDOM_CONTROL_NAME: &str = "Random";

/// Runs single- and multiple-mediator analyses on a loaded dataset.
pub fn analyze_dataset(
    ds: &MediationDataset,
    options: &AnalysisOptions,
) -> Result<AnalysisResult, HarnessError> {
    let opts = &options.mediation;
    let validation = validate_dataset(ds);
    let mut single = Vec::with_capacity(ds.p() + 1);
    for (j, name) in ds.mediators().names().iter().enumerate() {
        let sub = ds.with_mediators(&[j]).expect("index in range");
        let report = r2_mediation(&sub, opts).map_err(|source| HarnessError::Mediation {
            context: format!("single-mediator model for {name}"),
            source,
        })?;
        single.push(SingleMediatorResult {
            mediator: name.clone(),
            report,
        });
    }
    if options.random_control {
        let mut rng = substream(options.seed, RANDOM_CONTROL_STREAM);
        let noise: Vec<f64> = (0..ds.n())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let base = ds.with_mediators(&[0]).expect("at least one mediator");
        let control = MediationDataset::new(
            base.outcomes().to_vec(),
            base.exposure().clone(),
            crate::data::CovariateMatrix::column(noise, RANDOM_CONTROL_NAME),
        );
        let report = r2_mediation(&control, opts).map_err(|source| HarnessError::Mediation {
            context: "random-control model".into(),
            source,
        })?;
        single.push(SingleMediatorResult {
            mediator: RANDOM_CONTROL_NAME.into(),
            report,
        });
    }

    let mut joint = r2_mediation(ds, opts).map_err(|source| HarnessError::Mediation {
        context: "multiple-mediator model".into(),
        source,
    })?;
    let mut bootstrap_failures = None;
    if let Some(cfg) = &options.bootstrap {
        let targets: Vec<Quantity> = Quantity::headline()
            .into_iter()
            .filter(|q| ds.q_x() == 1 || !matches!(q, Quantity::Product | Quantity::Difference))
            .collect();
        let boot = bootstrap_ci(ds, opts, cfg, &targets)?;
        joint.intervals = boot.intervals;
        bootstrap_failures = Some(boot.n_failed);
    }
    Ok(AnalysisResult {
        dropped_rows: 0,
        validation,
        single,
        joint,
        bootstrap_failures,
    })
}

/// Reads a CSV and analyzes it.
pub fn run_analysis(
    csv_path: &Path,
    mapping: &ColumnMapping,
    options: &AnalysisOptions,
) -> Result<AnalysisResult, HarnessError> {
    let loaded = read_csv(csv_path, mapping)?;
    let mut result = analyze_dataset(&loaded.dataset, options)?;
    result.dropped_rows = loaded.dropped_rows;
    Ok(result)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Single-mediator table: one row per mediator, SOS for each measure.
pub fn write_table1<W: std::io::Write>(
    out: W,
    result: &AnalysisResult,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mediator", "sos_n", "sos_k", "sos_r", "sos_b", "sos_w"])?;
    for row in &result.single {
        let mut rec = vec![row.mediator.clone()];
        rec.extend(
            Measure::ALL
                .iter()
                .map(|&m| cell(row.report.measure(m).sos)),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Multiple-mediator table: one row per measure.
pub fn write_table2<W: std::io::Write>(
    out: W,
    report: &MediationReport,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["measure", "r2_tx", "r2_tm", "r2_txm", "r2_med", "sos"])?;
    for rec in &report.measures {
        w.write_record([
            rec.measure.suffix().to_string(),
            rec.r2_tx.to_string(),
            rec.r2_tm.to_string(),
            rec.r2_txm.to_string(),
            rec.r2_med.to_string(),
            cell(rec.sos),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `table1.csv`, `table2.csv` and `report.json` into `dir`.
pub fn write_analysis_outputs(
    dir: &Path,
    result: &AnalysisResult,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let t1 = dir.join("table1.csv");
    write_table1(fs::File::create(&t1).map_err(io_err(&t1))?, result)?;
    let t2 = dir.join("table2.csv");
    write_table2(fs::File::create(&t2).map_err(io_err(&t2))?, &result.joint)?;
    let js = dir.join("report.json");
    serde_json::to_writer_pretty(fs::File::create(&js).map_err(io_err(&js))?, result)?;
    Ok(vec![t1, t2, js])
}
