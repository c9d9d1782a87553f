//! Offline botnet detection over Zeek/Bro `conn.log` data.
//!
//! The pipeline is: [`ingest`] parses connection logs and scenario manifests,
//! [`featurize`] turns records into connection-level rows or per-host
//! time-window aggregates, [`labeling`] attaches coarse or fine ground truth,
//! [`models`] trains logistic regression, random forests and gradient boosted
//! trees, and [`experiment`] runs the leave-one-scenario-out protocol and
//! reports metrics from [`metrics`]. [`synth`] produces deterministic
//! scenarios for tests and demos.
//!
//! Data-parallel loops go through [`par`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Results are identical
//! either way.

pub mod error;
pub mod experiment;
pub mod featurize;
pub mod ingest;
pub mod labeling;
pub mod metrics;
pub mod models;
pub mod par;
pub mod synth;

pub use error::{Error, Result};
pub use experiment::{EvalReport, ExperimentSpec, ScenarioData};
pub use featurize::{FeatureMatrix, FeaturizeConfig, PortBucketConfig, Representation};
pub use ingest::{ConnRecord, ConnState, FieldMap, Proto, ScenarioSpec};
pub use labeling::{Label, LabelRegime, Labeler};
pub use models::{HyperParams, Model, ModelParams};
