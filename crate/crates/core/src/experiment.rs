//! Leave-one-scenario-out experiments, window sweeps and report assembly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::featurize::{featurize_dataset, FeatureMatrix, FeaturizeConfig, PortBucketConfig, Representation};
use crate::ingest::{parse_conn_log, ConnRecord, FieldMap, ScenarioSpec};
use crate::labeling::{LabelRegime, Labeler};
use crate::metrics::{classification_metrics, pr_curve, roc_auc, Confusion, PrPoint};
use crate::models::{feature_importance, predict_proba, train, HyperParams};
use crate::par;

/// One scenario's records and ground truth.
#[derive(Clone, Debug)]
pub struct ScenarioData {
    pub spec: ScenarioSpec,
    pub records: Vec<ConnRecord>,
}

impl ScenarioData {
    pub fn new(spec: ScenarioSpec, records: Vec<ConnRecord>) -> Self {
        ScenarioData { spec, records }
    }

    /// Reads a `conn.log` and its manifest.
    pub fn load(conn_log: &Path, manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest.display())))?;
        let spec = ScenarioSpec::parse(&text)?;
        let reader = BufReader::new(File::open(conn_log)?);
        let parsed = parse_conn_log(reader, &FieldMap::zeek())?;
        if !parsed.unknown_columns.is_empty() {
            log::warn!("{}: ignoring columns {:?}", conn_log.display(), parsed.unknown_columns);
        }
        Ok(ScenarioData { spec, records: parsed.records })
    }

    pub fn id(&self) -> &str {
        &self.spec.scenario_id
    }
}

fn default_window() -> f64 {
    30.0
}

/// Everything needed to reproduce one train/test run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub botnet: String,
    pub scenarios: Vec<String>,
    pub test_scenario: String,
    #[serde(default)]
    pub representation: Representation,
    #[serde(default = "default_window")]
    pub window_len: f64,
    #[serde(default)]
    pub labeling: LabelRegime,
    pub params: HyperParams,
    #[serde(default)]
    pub buckets: PortBucketConfig,
    #[serde(default)]
    pub connection_missing_flags: bool,
}

impl ExperimentSpec {
    pub fn new(
        botnet: impl Into<String>,
        scenarios: &[&str],
        test_scenario: &str,
        representation: Representation,
        params: HyperParams,
    ) -> Self {
        ExperimentSpec {
            botnet: botnet.into(),
            scenarios: scenarios.iter().map(|s| s.to_string()).collect(),
            test_scenario: test_scenario.to_string(),
            representation,
            window_len: 30.0,
            labeling: LabelRegime::Coarse,
            params,
            buckets: PortBucketConfig::default(),
            connection_missing_flags: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.len() < 2 {
            return Err(Error::Config("an experiment needs at least two scenarios".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !seen.insert(s) {
                return Err(Error::Config(format!("scenario `{s}` listed twice")));
            }
        }
        if !seen.contains(&self.test_scenario) {
            return Err(Error::Config(format!(
                "test scenario `{}` is not in the scenario set",
                self.test_scenario
            )));
        }
        if !(self.window_len > 0.0 && self.window_len.is_finite()) {
            return Err(Error::Config(format!("window length must be positive, got {}", self.window_len)));
        }
        self.params.validate()
    }

    pub fn featurize_config(&self) -> FeaturizeConfig {
        FeaturizeConfig {
            representation: self.representation,
            window_len: self.window_len,
            buckets: self.buckets.clone(),
            connection_missing_flags: self.connection_missing_flags,
        }
    }

    pub fn train_scenarios(&self) -> Vec<String> {
        self.scenarios.iter().filter(|s| **s != self.test_scenario).cloned().collect()
    }

    /// Same experiment with a different held-out scenario.
    pub fn with_test(&self, test: &str) -> Self {
        ExperimentSpec { test_scenario: test.to_string(), ..self.clone() }
    }
}

/// Splits per-scenario matrices into training rows (all other scenarios,
/// in key order) and the held-out scenario's rows.
pub fn scenario_split(
    matrices: &BTreeMap<String, FeatureMatrix>,
    test_id: &str,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let test =
        matrices.get(test_id).ok_or_else(|| Error::Config(format!("unknown test scenario `{test_id}`")))?;
    let train_parts: Vec<&FeatureMatrix> =
        matrices.iter().filter(|(k, _)| k.as_str() != test_id).map(|(_, m)| m).collect();
    if train_parts.is_empty() {
        return Err(Error::Config("no training scenarios left".into()));
    }
    for m in &train_parts {
        if m.schema() != test.schema() {
            return Err(Error::Matrix("scenarios have different feature schemas".into()));
        }
    }
    Ok((FeatureMatrix::concat(&train_parts)?, test.clone()))
}

/// Featurizes every scenario named by `spec` (in parallel).
pub fn featurize_scenarios(
    spec: &ExperimentSpec,
    data: &BTreeMap<String, ScenarioData>,
) -> Result<BTreeMap<String, FeatureMatrix>> {
    let cfg = spec.featurize_config();
    let ids: Vec<&String> = spec.scenarios.iter().collect();
    for id in &ids {
        if !data.contains_key(id.as_str()) {
            return Err(Error::Config(format!("scenario `{id}` has no data")));
        }
    }
    let built = par::map(&ids, |id| -> Result<FeatureMatrix> {
        let d = &data[id.as_str()];
        let labeler = Labeler::new(&d.spec, spec.labeling).stage("label")?;
        featurize_dataset(&d.records, &d.spec, &cfg, &labeler).stage("featurize")
    });
    ids.into_iter().cloned().zip(built).map(|(k, m)| Ok((k, m?))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub legitimate: usize,
    pub malicious: usize,
}

impl ClassCounts {
    fn of(m: &FeatureMatrix) -> Self {
        let (legitimate, malicious) = m.class_counts();
        ClassCounts { legitimate, malicious }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub importance: f64,
}

/// Result of one train/test run.
///
/// `roc_auc`, `pr_auc` and the curve are absent when the test scenario
/// holds a single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentSpec,
    pub train_scenarios: Vec<String>,
    pub n_features: usize,
    pub schema_fingerprint: String,
    pub train_rows: ClassCounts,
    pub test_rows: ClassCounts,
    pub threshold: f64,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
    pub importance: Vec<Importance>,
}

const CSV_COLUMNS: [&str; 21] = [
    "botnet",
    "train",
    "test",
    "representation",
    "window_len",
    "labeling",
    "family",
    "seed",
    "n_features",
    "train_legitimate",
    "train_malicious",
    "test_legitimate",
    "test_malicious",
    "tp",
    "fp",
    "tn",
    "fn",
    "precision",
    "recall",
    "f1",
    "roc_auc",
];

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn csv_header() -> String {
        let mut h = CSV_COLUMNS.join(",");
        h.push_str(",pr_auc");
        h
    }

    /// One flat row matching [`EvalReport::csv_header`]. Scenario lists are
    /// joined with `+`; absent AUCs are empty fields.
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            c.botnet.clone(),
            self.train_scenarios.join("+"),
            c.test_scenario.clone(),
            c.representation.to_string(),
            c.window_len.to_string(),
            c.labeling.to_string(),
            c.params.family().to_string(),
            c.params.seed.to_string(),
            self.n_features.to_string(),
            self.train_rows.legitimate.to_string(),
            self.train_rows.malicious.to_string(),
            self.test_rows.legitimate.to_string(),
            self.test_rows.malicious.to_string(),
            self.confusion.tp.to_string(),
            self.confusion.fp.to_string(),
            self.confusion.tn.to_string(),
            self.confusion.fn_.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.f1.to_string(),
            opt(self.roc_auc),
            opt(self.pr_auc),
        ]
        .join(",")
    }

    /// `recall,precision` pairs.
    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for p in &self.pr_curve {
            let _ = writeln!(s, "{},{}", p.recall, p.precision);
        }
        s
    }

    /// `rank,feature,importance`.
    pub fn importance_csv(&self) -> String {
        let mut s = String::from("rank,feature,importance\n");
        for (i, imp) in self.importance.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i + 1, imp.feature, imp.importance);
        }
        s
    }
}

/// Trains on the non-test matrices and evaluates on the test matrix.
pub fn evaluate(spec: &ExperimentSpec, matrices: &BTreeMap<String, FeatureMatrix>) -> Result<EvalReport> {
    spec.validate()?;
    let selected: BTreeMap<String, FeatureMatrix> = spec
        .scenarios
        .iter()
        .map(|s| {
            matrices
                .get(s)
                .map(|m| (s.clone(), m.clone()))
                .ok_or_else(|| Error::Config(format!("scenario `{s}` has no feature matrix")))
        })
        .collect::<Result<_>>()
        .stage("split")?;
    let (train_m, test_m) = scenario_split(&selected, &spec.test_scenario).stage("split")?;
    let model = train(&train_m, &spec.params).stage("train")?;
    let scores = predict_proba(&model, &test_m).stage("score")?;
    let labels = test_m.labels();
    let cm = classification_metrics(labels, &scores, 0.5).stage("metrics")?;
    let (neg, pos) = test_m.class_counts();
    let (roc, pr) = if neg > 0 && pos > 0 {
        (Some(roc_auc(labels, &scores).stage("metrics")?), Some(pr_curve(labels, &scores).stage("metrics")?))
    } else {
        (None, None)
    };
    let importance = feature_importance(&model)
        .into_iter()
        .map(|(feature, importance)| Importance { feature, importance })
        .collect();
    Ok(EvalReport {
        config: spec.clone(),
        train_scenarios: spec.train_scenarios(),
        n_features: train_m.n_cols(),
        schema_fingerprint: train_m.schema().fingerprint(),
        train_rows: ClassCounts::of(&train_m),
        test_rows: ClassCounts::of(&test_m),
        threshold: 0.5,
        confusion: cm.confusion,
        precision: cm.precision,
        recall: cm.recall,
        f1: cm.f1,
        roc_auc: roc,
        pr_auc: pr.as_ref().map(|c| c.auc),
        pr_curve: pr.map(|c| c.points).unwrap_or_default(),
        importance,
    })
}

/// featurize, label, split, train, score and measure one experiment.
pub fn run_experiment(spec: &ExperimentSpec, data: &BTreeMap<String, ScenarioData>) -> Result<EvalReport> {
    spec.validate()?;
    let matrices = featurize_scenarios(spec, data)?;
    evaluate(spec, &matrices)
}

/// Holds out each scenario in turn; reports follow `spec.scenarios` order.
pub fn leave_one_out(
    spec: &ExperimentSpec,
    data: &BTreeMap<String, ScenarioData>,
) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    let matrices = featurize_scenarios(spec, data)?;
    spec.scenarios.iter().map(|t| evaluate(&spec.with_test(t), &matrices)).collect()
}

/// Runs `spec` once per window length. With `all_splits`, every scenario
/// is held out in turn for each window. Reports are ordered by window, then
/// held-out scenario.
pub fn window_sweep(
    spec: &ExperimentSpec,
    windows: &[f64],
    all_splits: bool,
    data: &BTreeMap<String, ScenarioData>,
) -> Result<Vec<EvalReport>> {
    if windows.is_empty() {
        return Err(Error::Config("window list is empty".into()));
    }
    if let Some(w) = windows.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("window length must be positive, got {w}")));
    }
    let mut out = Vec::new();
    for &w in windows {
        let s = ExperimentSpec { window_len: w, ..spec.clone() };
        if all_splits {
            out.extend(leave_one_out(&s, data)?);
        } else {
            out.push(run_experiment(&s, data)?);
        }
    }
    Ok(out)
}

/// Table of flat report rows with a header line.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = EvalReport::csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// `window_len,test,f1` points for plotting F1 against the window length.
pub fn f1_by_window_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("window_len,test,f1\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{}", r.config.window_len, r.config.test_scenario, r.f1);
    }
    s
}
