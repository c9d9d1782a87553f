//! Binary classifiers: L1-regularised logistic regression, random forest and
//! gradient boosted trees behind one train/score interface.
//!
//! Scores are the probability of the malicious class. A trained [`Model`]
//! records the names of the columns it was trained on and refuses to score a
//! matrix with a different layout.

mod boosting;
mod codec;
mod forest;
mod grid;
pub mod logistic;
mod logreg;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::fingerprint_names;
use crate::featurize::FeatureMatrix;
use crate::par;

pub use boosting::BoostingModel;
pub use codec::{deserialize, serialize, MODEL_FORMAT, MODEL_VERSION};
pub use forest::ForestModel;
pub use grid::{grid_search, grid_search_weighted, stratified_folds, GridCell, GridResult, ParamGrid};
pub use logreg::LogRegModel;
pub use tree::Tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logreg,
    RandomForest,
    GradientBoosting,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Logreg, Family::RandomForest, Family::GradientBoosting];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Logreg => "logreg",
            Family::RandomForest => "random_forest",
            Family::GradientBoosting => "gradient_boosting",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" | "lr" => Ok(Family::Logreg),
            "random_forest" | "rf" => Ok(Family::RandomForest),
            "gradient_boosting" | "gbt" => Ok(Family::GradientBoosting),
            _ => Err(Error::Config(format!("unknown model family `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegParams {
    pub l1_strength: f64,
    /// Stop once the gradient mapping's max-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams { l1_strength: 1e-3, tol: 1e-6, max_iter: 10_000 }
    }
}

/// How many features a forest examines at each split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    #[default]
    Sqrt,
    Log2,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::Log2 => (d as f64).log2().ceil() as usize,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Count(k) => k,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub features_per_split: FeaturesPerSplit,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            features_per_split: FeaturesPerSplit::Sqrt,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams { n_estimators: 100, max_depth: 3, learning_rate: 0.05, min_samples_leaf: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelParams {
    Logreg(LogRegParams),
    RandomForest(ForestParams),
    GradientBoosting(BoostingParams),
}

impl ModelParams {
    pub fn family(&self) -> Family {
        match self {
            ModelParams::Logreg(_) => Family::Logreg,
            ModelParams::RandomForest(_) => Family::RandomForest,
            ModelParams::GradientBoosting(_) => Family::GradientBoosting,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Logreg => ModelParams::Logreg(LogRegParams::default()),
            Family::RandomForest => ModelParams::RandomForest(ForestParams::default()),
            Family::GradientBoosting => ModelParams::GradientBoosting(BoostingParams::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    None,
    /// Weights each class by n / (2 * n_class).
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(flatten)]
    pub model: ModelParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

impl HyperParams {
    pub fn new(model: ModelParams, seed: u64) -> Self {
        HyperParams { model, seed, class_weight: ClassWeight::None }
    }

    pub fn logreg(l1_strength: f64) -> Self {
        Self::new(ModelParams::Logreg(LogRegParams { l1_strength, ..Default::default() }), 0)
    }

    pub fn random_forest(n_trees: usize, seed: u64) -> Self {
        Self::new(ModelParams::RandomForest(ForestParams { n_trees, ..Default::default() }), seed)
    }

    pub fn gradient_boosting(n_estimators: usize, max_depth: usize, learning_rate: f64) -> Self {
        Self::new(
            ModelParams::GradientBoosting(BoostingParams {
                n_estimators,
                max_depth,
                learning_rate,
                ..Default::default()
            }),
            0,
        )
    }

    pub fn family(&self) -> Family {
        self.model.family()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match &self.model {
            ModelParams::Logreg(p) => {
                if !(p.l1_strength > 0.0 && p.l1_strength.is_finite()) {
                    return bad("l1_strength must be positive");
                }
                if !(p.tol > 0.0) || p.max_iter == 0 {
                    return bad("tol must be positive and max_iter at least 1");
                }
            }
            ModelParams::RandomForest(p) => {
                if p.n_trees == 0 {
                    return bad("n_trees must be at least 1");
                }
                if p.max_depth == Some(0) {
                    return bad("max_depth must be at least 1");
                }
                if p.features_per_split == FeaturesPerSplit::Count(0) {
                    return bad("features_per_split must be at least 1");
                }
                if p.min_samples_leaf == 0 {
                    return bad("min_samples_leaf must be at least 1");
                }
            }
            ModelParams::GradientBoosting(p) => {
                if p.n_estimators == 0 {
                    return bad("n_estimators must be at least 1");
                }
                if p.max_depth == 0 {
                    return bad("max_depth must be at least 1");
                }
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
                if p.min_samples_leaf == 0 {
                    return bad("min_samples_leaf must be at least 1");
                }
            }
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams::new(ModelParams::RandomForest(ForestParams::default()), 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Logreg(LogRegModel),
    RandomForest(ForestModel),
    GradientBoosting(BoostingModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub params: HyperParams,
    pub columns: Vec<String>,
    pub fingerprint: String,
    pub body: ModelBody,
}

/// Training rows in the layout the learners use.
pub(crate) struct TrainSet<'a> {
    pub x: &'a [f64],
    pub n: usize,
    pub d: usize,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl TrainSet<'_> {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

/// Fits a model. Deterministic in `(x, params)`.
pub fn train(x: &FeatureMatrix, params: &HyperParams) -> Result<Model> {
    params.validate()?;
    if x.is_empty() {
        return Err(Error::Training("no training rows".into()));
    }
    if x.n_cols() == 0 {
        return Err(Error::Training("no feature columns".into()));
    }
    if let Some(pos) = x.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite value in row {} column `{}`",
            pos / x.n_cols(),
            x.schema().columns()[pos % x.n_cols()].name
        )));
    }
    let y: Vec<f64> = x.labels().iter().map(|l| l.as_u8() as f64).collect();
    let (neg, pos) = x.class_counts();
    let w = match params.class_weight {
        ClassWeight::None => vec![1.0; y.len()],
        ClassWeight::Balanced => {
            let n = y.len() as f64;
            let wp = if pos > 0 { n / (2.0 * pos as f64) } else { 0.0 };
            let wn = if neg > 0 { n / (2.0 * neg as f64) } else { 0.0 };
            y.iter().map(|&v| if v > 0.5 { wp } else { wn }).collect()
        }
    };
    let ts = TrainSet { x: x.values(), n: x.n_rows(), d: x.n_cols(), y, w };
    let body = match &params.model {
        ModelParams::Logreg(p) => {
            if neg == 0 || pos == 0 {
                return Err(Error::Training("logistic regression needs both classes".into()));
            }
            ModelBody::Logreg(logreg::fit(&ts, p)?)
        }
        ModelParams::RandomForest(p) => ModelBody::RandomForest(forest::fit(&ts, p, params.seed)),
        ModelParams::GradientBoosting(p) => ModelBody::GradientBoosting(boosting::fit(&ts, p)),
    };
    let columns = x.schema().names();
    Ok(Model { params: params.clone(), fingerprint: x.schema().fingerprint(), columns, body })
}

impl Model {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// Score of a single row, without a schema check.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        match &self.body {
            ModelBody::Logreg(m) => m.score(row),
            ModelBody::RandomForest(m) => m.score(row),
            ModelBody::GradientBoosting(m) => m.score(row),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        let fp = fingerprint_names(self.columns.iter().map(String::as_str));
        if fp != self.fingerprint {
            return bad("schema fingerprint does not match column names".into());
        }
        let d = self.columns.len();
        let check = match &self.body {
            ModelBody::Logreg(m) => m.validate(d),
            ModelBody::RandomForest(m) => m.validate(d),
            ModelBody::GradientBoosting(m) => m.validate(d),
        };
        if let Err(e) = check {
            return bad(e);
        }
        if self.family() != body_family(&self.body) {
            return bad("parameters and body disagree on the model family".into());
        }
        Ok(())
    }
}

fn body_family(b: &ModelBody) -> Family {
    match b {
        ModelBody::Logreg(_) => Family::Logreg,
        ModelBody::RandomForest(_) => Family::RandomForest,
        ModelBody::GradientBoosting(_) => Family::GradientBoosting,
    }
}

fn check_schema(model: &Model, x: &FeatureMatrix) -> Result<()> {
    if x.schema().fingerprint() == model.fingerprint {
        return Ok(());
    }
    let names = x.schema().names();
    let n = names.len().max(model.columns.len());
    for i in 0..n {
        let expected = model.columns.get(i).map(String::as_str).unwrap_or("<end>");
        let found = names.get(i).map(String::as_str).unwrap_or("<end>");
        if expected != found {
            return Err(Error::SchemaMismatch {
                index: i,
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    unreachable!("fingerprints differ but names agree")
}

/// Malicious-class probabilities, one per row of `x`.
pub fn predict_proba(model: &Model, x: &FeatureMatrix) -> Result<Vec<f64>> {
    check_schema(model, x)?;
    const CHUNK: usize = 512;
    let n = x.n_rows();
    let chunks = par::map_range(n.div_ceil(CHUNK), |c| {
        (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|i| model.score_row(x.row(i))).collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Features ranked by importance, normalised to sum to 1.
///
/// Tree ensembles use impurity decrease. Logistic regression uses the
/// absolute weight on the standardised scale, which ignores correlation
/// between features and is only a rough guide.
pub fn feature_importance(model: &Model) -> Vec<(String, f64)> {
    let d = model.n_features();
    let raw = match &model.body {
        ModelBody::Logreg(m) => m.weights.iter().map(|w| w.abs()).collect(),
        ModelBody::RandomForest(m) => m.importance(d),
        ModelBody::GradientBoosting(m) => m.importance(d),
    };
    rank_importance(&model.columns, raw)
}

fn rank_importance(columns: &[String], raw: Vec<f64>) -> Vec<(String, f64)> {
    let total: f64 = raw.iter().sum();
    let vals: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / columns.len() as f64; columns.len()]
    };
    let mut idx: Vec<usize> = (0..columns.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.into_iter().map(|i| (columns[i].clone(), vals[i])).collect()
}

/// Per-tree seeds drawn from the master seed with SplitMix64.
pub(crate) fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{RowKey, Schema};
    use crate::labeling::Label;

    pub(crate) fn matrix(x: &[Vec<f64>], y: &[u8]) -> FeatureMatrix {
        let d = x[0].len();
        let names: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        let keys = (0..x.len())
            .map(|i| RowKey { scenario: "s".into(), entity: "10.0.0.1".parse().unwrap(), window: i as u64 })
            .collect();
        let labels = y.iter().map(|&v| Label::from_bool(v == 1)).collect();
        FeatureMatrix::from_parts(Schema::from_names(&names), keys, x.concat(), labels).unwrap()
    }

    #[test]
    fn params_toml_like_roundtrip() {
        let p = HyperParams::gradient_boosting(50, 3, 0.1);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"family\":\"gradient_boosting\""));
        let q: HyperParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let r: HyperParams = serde_json::from_str(r#"{"family":"random_forest","n_trees":10}"#).unwrap();
        assert_eq!(r.family(), Family::RandomForest);
        assert!(serde_json::from_str::<HyperParams>(r#"{"family":"svm"}"#).is_err());
    }

    #[test]
    fn validation_ranges() {
        assert!(HyperParams::logreg(0.0).validate().is_err());
        assert!(HyperParams::gradient_boosting(10, 3, 1.5).validate().is_err());
        assert!(HyperParams::gradient_boosting(10, 0, 0.1).validate().is_err());
        assert!(HyperParams::random_forest(0, 1).validate().is_err());
        assert!(HyperParams::random_forest(1, 1).validate().is_ok());
    }

    #[test]
    fn features_per_split_rules() {
        assert_eq!(FeaturesPerSplit::Sqrt.resolve(936), 31);
        assert_eq!(FeaturesPerSplit::Sqrt.resolve(16), 4);
        assert_eq!(FeaturesPerSplit::Log2.resolve(8), 3);
        assert_eq!(FeaturesPerSplit::Count(50).resolve(10), 10);
    }

    #[test]
    fn rejects_nan_and_single_class_logreg() {
        let x = matrix(&[vec![1.0], vec![2.0]], &[0, 0]);
        assert!(matches!(train(&x, &HyperParams::logreg(1e-3)), Err(Error::Training(_))));
        assert!(train(&x, &HyperParams::random_forest(3, 0)).is_ok());
    }

    #[test]
    fn schema_mismatch_names_first_column() {
        let x = matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0, 1]);
        let m = train(&x, &HyperParams::random_forest(3, 0)).unwrap();
        let mut names = x.schema().names();
        names[1] = "other".into();
        let y = FeatureMatrix::from_parts(
            Schema::from_names(&names),
            x.keys().to_vec(),
            x.values().to_vec(),
            x.labels().to_vec(),
        )
        .unwrap();
        match predict_proba(&m, &y) {
            Err(Error::SchemaMismatch { index, expected, found }) => {
                assert_eq!((index, expected.as_str(), found.as_str()), (1, "f1", "other"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn importance_ties_follow_schema_order() {
        let cols: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = rank_importance(&cols, vec![1.0, 2.0, 1.0]);
        assert_eq!(r[0].0, "b");
        assert_eq!(r[1].0, "a");
        assert_eq!(r[2].0, "c");
        assert!((r.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_per_tree() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
