//! Experiment configuration files and flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use botflow::models::{BoostingParams, ForestParams, LogRegParams, ModelParams, ParamGrid};
use botflow::{ExperimentSpec, HyperParams, LabelRegime, Representation};
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const CONN_LOG: &str = "conn.log";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub conn_log: PathBuf,
    pub manifest: PathBuf,
}

impl InputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        InputPaths { conn_log: dir.join(CONN_LOG), manifest: dir.join(MANIFEST) }
    }

    /// Fails with a usage error naming the first missing file.
    pub fn check(&self) -> Result<()> {
        for p in [&self.conn_log, &self.manifest] {
            if !p.is_file() {
                return Err(Usage(format!("input file not found: {}", p.display())).into());
            }
        }
        Ok(())
    }
}

fn default_folds() -> usize {
    5
}

/// An experiment or sweep as read from TOML. Relative paths are taken
/// from the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every randomized step.
    pub seed: Option<u64>,
    /// Holds `<id>/conn.log` and `<id>/manifest.txt` per scenario.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Per-scenario paths, overriding `data_dir`.
    #[serde(default)]
    pub inputs: BTreeMap<String, InputPaths>,
    /// Hold out every scenario in turn instead of only `test_scenario`.
    #[serde(default)]
    pub all_splits: bool,
    /// Window lengths for `sweep`.
    #[serde(default)]
    pub windows: Vec<f64>,
    /// Grid searched on each training split; replaces `experiment.params`.
    #[serde(default)]
    pub grid: Option<ParamGrid>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub experiment: ExperimentSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Usage(format!("config file not found: {}", path.display())).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let abs = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        cfg.data_dir = cfg.data_dir.as_ref().map(abs);
        for v in cfg.inputs.values_mut() {
            *v = InputPaths { conn_log: abs(&v.conn_log), manifest: abs(&v.manifest) };
        }
        Ok(cfg)
    }

    /// Fills `inputs` for every scenario, applies the master seed and
    /// validates. After this the config is what gets embedded in outputs.
    pub fn resolve(mut self) -> Result<Self> {
        let seed =
            self.seed.ok_or_else(|| Usage("a seed is required (config key `seed` or --seed)".into()))?;
        self.experiment.params.seed = seed;
        for id in &self.experiment.scenarios {
            if !self.inputs.contains_key(id) {
                let dir = self
                    .data_dir
                    .as_ref()
                    .ok_or_else(|| Usage(format!("no inputs for scenario `{id}` and no data_dir")))?;
                self.inputs.insert(id.clone(), InputPaths::in_dir(&dir.join(id)));
            }
        }
        self.inputs.retain(|k, _| self.experiment.scenarios.contains(k));
        for p in self.inputs.values_mut() {
            *p = InputPaths { conn_log: absolute(&p.conn_log), manifest: absolute(&p.manifest) };
            p.check()?;
        }
        self.data_dir = None;
        if self.folds < 2 {
            bail!(Usage("folds must be at least 2".into()));
        }
        self.experiment.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(self)
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Model flags shared by `train`, `experiment` and `sweep`.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ModelArgs {
    /// Model family: logreg, random_forest or gradient_boosting.
    #[arg(long)]
    pub family: Option<botflow::models::Family>,
    /// Trees in a random forest.
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Maximum tree depth (forest or boosting).
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Boosting stages.
    #[arg(long)]
    pub n_estimators: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L1 penalty for logistic regression.
    #[arg(long)]
    pub l1: Option<f64>,
}

impl ModelArgs {
    /// Applies the flags on top of `params`. Switching family starts from
    /// that family's defaults.
    pub fn apply(&self, params: &mut HyperParams) -> Result<()> {
        if let Some(f) = self.family {
            if f != params.family() {
                params.model = ModelParams::default_for(f);
            }
        }
        let family = params.family();
        let misplaced =
            |flag: &str| -> anyhow::Error { Usage(format!("--{flag} does not apply to {family}")).into() };
        match &mut params.model {
            ModelParams::Logreg(LogRegParams { l1_strength, .. }) => {
                if let Some(v) = self.l1 {
                    *l1_strength = v;
                }
                if self.n_trees.is_some() || self.max_depth.is_some() {
                    return Err(misplaced(if self.n_trees.is_some() { "n-trees" } else { "max-depth" }));
                }
                if self.n_estimators.is_some() || self.learning_rate.is_some() {
                    return Err(misplaced("n-estimators/--learning-rate"));
                }
            }
            ModelParams::RandomForest(ForestParams { n_trees, max_depth, .. }) => {
                if let Some(v) = self.n_trees {
                    *n_trees = v;
                }
                if let Some(v) = self.max_depth {
                    *max_depth = Some(v);
                }
                if self.l1.is_some() {
                    return Err(misplaced("l1"));
                }
                if self.n_estimators.is_some() || self.learning_rate.is_some() {
                    return Err(misplaced("n-estimators/--learning-rate"));
                }
            }
            ModelParams::GradientBoosting(BoostingParams {
                n_estimators, max_depth, learning_rate, ..
            }) => {
                if let Some(v) = self.n_estimators {
                    *n_estimators = v;
                }
                if let Some(v) = self.max_depth {
                    *max_depth = v;
                }
                if let Some(v) = self.learning_rate {
                    *learning_rate = v;
                }
                if self.l1.is_some() || self.n_trees.is_some() {
                    return Err(misplaced(if self.l1.is_some() { "l1" } else { "n-trees" }));
                }
            }
        }
        params.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(())
    }
}

/// Experiment-level flags that override config keys.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ExperimentArgs {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Held-out scenario.
    #[arg(long)]
    pub test: Option<String>,
    /// Hold out every scenario in turn.
    #[arg(long)]
    pub all_splits: bool,
    #[arg(long)]
    pub rep: Option<Representation>,
    /// Window length in seconds.
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub labeling: Option<LabelRegime>,
    /// Ignore any grid in the config and train the configured model.
    #[arg(long)]
    pub no_grid: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

impl ExperimentArgs {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(d) = &self.data_dir {
            cfg.data_dir = Some(d.clone());
        }
        let e = &mut cfg.experiment;
        if let Some(t) = &self.test {
            e.test_scenario = t.clone();
        }
        if self.all_splits {
            cfg.all_splits = true;
        }
        if let Some(r) = self.rep {
            e.representation = r;
        }
        if let Some(w) = self.window {
            e.window_len = w;
        }
        if let Some(l) = self.labeling {
            e.labeling = l;
        }
        if self.no_grid {
            cfg.grid = None;
        }
        self.model.apply(&mut cfg.experiment.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use botflow::models::Family;

    const CONFIG: &str = r#"
seed = 7
data_dir = "data"
all_splits = true
windows = [30, 60.5]

[experiment]
botnet = "spam"
scenarios = ["a", "b", "c"]
test_scenario = "a"
representation = "traffic"
window_len = 30
labeling = "coarse"

[experiment.params]
family = "random_forest"
n_trees = 10
"#;

    #[test]
    fn parses_toml_with_integer_floats() {
        let c: RunConfig = toml::from_str(CONFIG).unwrap();
        assert_eq!(c.windows, vec![30.0, 60.5]);
        assert_eq!(c.experiment.window_len, 30.0);
        assert_eq!(c.experiment.params.family(), Family::RandomForest);
        assert_eq!(c.folds, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = CONFIG.replace("all_splits", "all_split");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut c: RunConfig = toml::from_str(CONFIG).unwrap();
        let args = ExperimentArgs {
            seed: Some(9),
            window: Some(120.0),
            model: ModelArgs { n_trees: Some(3), ..Default::default() },
            ..Default::default()
        };
        args.apply(&mut c).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.experiment.window_len, 120.0);
        assert_eq!(c.experiment.params, HyperParams::random_forest(3, 0));
    }

    #[test]
    fn family_switch_resets_params() {
        let mut p = HyperParams::random_forest(10, 1);
        ModelArgs { family: Some(Family::GradientBoosting), n_estimators: Some(5), ..Default::default() }
            .apply(&mut p)
            .unwrap();
        let ModelParams::GradientBoosting(g) = &p.model else { panic!() };
        assert_eq!(g.n_estimators, 5);
        assert_eq!(p.seed, 1);
    }

    #[test]
    fn misplaced_flag_is_a_usage_error() {
        let mut p = HyperParams::logreg(0.1);
        let err = ModelArgs { n_trees: Some(5), ..Default::default() }.apply(&mut p).unwrap_err();
        assert!(err.downcast_ref::<Usage>().is_some());
    }

    #[test]
    fn missing_seed_is_rejected() {
        let mut c: RunConfig = toml::from_str(CONFIG).unwrap();
        c.seed = None;
        let err = c.resolve().unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }
}
