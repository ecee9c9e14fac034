//! R²-based mediation effect sizes for right-censored survival outcomes
//! under Cox proportional-hazards models.
//!
//! The pipeline fits three Cox models on the same subjects (outcome on
//! exposure, on mediators, and on both), scores each with five pseudo-R²
//! measures, and reports the mediated R²
//! `R²(T,M) + R²(T,X) - R²(T,XM)` together with its share of the exposure
//! R² (SOS). Product and difference proportions are reported alongside for
//! single-exposure data.
//!
//! ```no_run
//! use survmed::mediation::{r2_mediation, MediationOptions};
//! use survmed::sim::{gen_dataset, ScenarioConfig};
//! use survmed::rng::substream;
//!
//! let cfg = ScenarioConfig::uniform(2000, 5, 1.0, 0.5, 2.5, 0.85);
//! let ds = gen_dataset(&cfg, &mut substream(42, 0)).unwrap();
//! let report = r2_mediation(&ds, &MediationOptions::default()).unwrap();
//! for m in &report.measures {
//!     println!("{}: SOS = {:?}", m.measure, m.sos);
//! }
//! ```

pub mod bootstrap;
pub mod cox;
pub mod csv_io;
pub mod data;
pub mod harness;
mod linalg;
pub mod mediation;
pub mod r2;
pub mod rng;
pub mod sim;

pub use cox::{fit_cox, CoxError, CoxFit, FitOptions, TieMethod};
pub use data::{CovariateMatrix, MediationDataset, SurvivalRecord};
pub use mediation::{r2_mediation, MediationOptions, MediationReport, Quantity};
pub use r2::{Measure, R2Set};
