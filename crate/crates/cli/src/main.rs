//! `botflow`: command-line driver for the detection pipeline.

mod config;
mod output;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use botflow::experiment::{evaluate, f1_by_window_csv, featurize_scenarios, scenario_split, summary_csv};
use botflow::featurize::featurize_dataset_with_stats;
use botflow::models::{
    deserialize, feature_importance, grid_search_weighted, serialize, train, GridResult, ParamGrid,
};
use botflow::synth::{generate, SynthParams, PRESETS};
use botflow::{
    par, EvalReport, ExperimentSpec, FeatureMatrix, FeaturizeConfig, HyperParams, LabelRegime, Labeler,
    Representation, ScenarioData,
};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{absolute, ExperimentArgs, InputPaths, ModelArgs, RunConfig};
use output::{resolve_out_dir, Staged};

/// Invalid invocation or missing input; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "botflow", version, about = "Offline botnet detection over Zeek conn.log files")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, short = 'j', global = true, env = "BOTFLOW_JOBS")]
    jobs: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, clap::Args)]
struct InputArgs {
    /// Directory holding conn.log and manifest.txt.
    #[arg(long, conflicts_with_all = ["log", "manifest"])]
    scenario: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    log: Option<PathBuf>,
    #[arg(long, requires = "log")]
    manifest: Option<PathBuf>,
}

impl InputArgs {
    fn resolve(&self) -> Result<InputPaths> {
        let p = match (&self.scenario, &self.log, &self.manifest) {
            (Some(d), _, _) => InputPaths::in_dir(d),
            (None, Some(l), Some(m)) => InputPaths { conn_log: l.clone(), manifest: m.clone() },
            _ => return Err(Usage("give --scenario DIR or both --log and --manifest".into()).into()),
        };
        let p = InputPaths { conn_log: absolute(&p.conn_log), manifest: absolute(&p.manifest) };
        p.check()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Turn one scenario into a labelled feature matrix CSV.
    Featurize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "traffic+temporal")]
        rep: Representation,
        /// Window length in seconds.
        #[arg(long, default_value_t = 30.0)]
        window: f64,
        #[arg(long, default_value = "coarse")]
        labeling: LabelRegime,
        /// Append missing-value indicator columns to connection rows.
        #[arg(long)]
        missing_flags: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the per-record ground-truth label of one scenario.
    Label {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "coarse")]
        labeling: LabelRegime,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on one or more feature CSVs.
    Train {
        /// Feature matrix CSVs, concatenated in order.
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        /// TOML file with model hyper-parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Search the default grid of the chosen family.
        #[arg(long)]
        grid: bool,
        /// TOML file with a hyper-parameter grid.
        #[arg(long, conflicts_with = "grid")]
        grid_file: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-scenario-out experiment from a TOML config.
    Experiment {
        config: PathBuf,
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat an experiment for several window lengths.
    Sweep {
        config: PathBuf,
        /// Comma-separated window lengths, overriding `windows` in the config.
        #[arg(long, value_delimiter = ',')]
        windows: Vec<f64>,
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scenario (conn.log and manifest.txt).
    Synth {
        /// Preset name: spam, ddos or spam-imbalanced.
        #[arg(long, required_unless_present = "params")]
        preset: Option<String>,
        /// TOML or JSON file with generator parameters.
        #[arg(long, conflicts_with = "preset")]
        params: Option<PathBuf>,
        /// Scenario id, also the output subdirectory.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the features of a trained model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        /// Only the first N features.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = par::set_threads(n) {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Featurize { input, rep, window, labeling, missing_flags, out } => {
            cmd_featurize(input.resolve()?, rep, window, labeling, missing_flags, resolve_out_dir(out))
        }
        Command::Label { input, labeling, out } => {
            cmd_label(input.resolve()?, labeling, resolve_out_dir(out))
        }
        Command::Train { features, params, grid, grid_file, folds, seed, model, out } => {
            cmd_train(features, params, grid, grid_file, folds, seed, model, resolve_out_dir(out))
        }
        Command::Experiment { config, args, out } => {
            let mut cfg = RunConfig::load(&config)?;
            args.apply(&mut cfg)?;
            cmd_experiment(cfg.resolve()?, resolve_out_dir(out))
        }
        Command::Sweep { config, windows, args, out } => {
            let mut cfg = RunConfig::load(&config)?;
            args.apply(&mut cfg)?;
            if !windows.is_empty() {
                cfg.windows = windows;
            }
            if cfg.windows.is_empty() {
                return Err(Usage("no windows: set `windows` in the config or pass --windows".into()).into());
            }
            cmd_sweep(cfg.resolve()?, resolve_out_dir(out))
        }
        Command::Synth { preset, params, id, seed, out } => {
            cmd_synth(preset, params, id, seed, resolve_out_dir(out))
        }
        Command::Importance { model, top, out } => cmd_importance(&model, top, resolve_out_dir(out)),
    }
}

/// One-line JSON header embedded in every output.
fn header<T: Serialize>(command: &str, config: &T) -> Result<String> {
    Ok(format!("botflow {} {command} config: {}", env!("CARGO_PKG_VERSION"), serde_json::to_string(config)?))
}

fn with_header(header: &str, body: &str) -> String {
    format!("# {header}\n{body}")
}

fn report_written(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn load_scenario(p: &InputPaths) -> Result<ScenarioData> {
    ScenarioData::load(&p.conn_log, &p.manifest).with_context(|| format!("ingest {}", p.conn_log.display()))
}

#[derive(Serialize)]
struct FeaturizeRun<'a> {
    inputs: &'a InputPaths,
    representation: Representation,
    window_len: f64,
    labeling: LabelRegime,
    connection_missing_flags: bool,
}

fn cmd_featurize(
    input: InputPaths,
    rep: Representation,
    window: f64,
    labeling: LabelRegime,
    missing_flags: bool,
    out: PathBuf,
) -> Result<()> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Usage(format!("window length must be positive, got {window}")).into());
    }
    let data = load_scenario(&input)?;
    let mut cfg = FeaturizeConfig::new(rep, window);
    cfg.connection_missing_flags = missing_flags;
    let labeler = Labeler::new(&data.spec, labeling).context("label")?;
    let (m, stats) =
        featurize_dataset_with_stats(&data.records, &data.spec, &cfg, &labeler).context("featurize")?;
    let run = FeaturizeRun {
        inputs: &input,
        representation: rep,
        window_len: window,
        labeling,
        connection_missing_flags: missing_flags,
    };
    let mut buf = Vec::new();
    m.write_csv(&mut buf, &[header("featurize", &run)?]).context("featurize")?;
    let mut staged = Staged::new(&out)?;
    staged.write(format!("{}.features.csv", data.id()), buf)?;
    let files = staged.commit()?;
    let (neg, pos) = m.class_counts();
    println!(
        "{}: {} rows x {} columns; {} legitimate, {} malicious; {} records out of bounds, {} without an internal endpoint",
        data.id(),
        m.n_rows(),
        m.n_cols(),
        neg,
        pos,
        stats.out_of_bounds,
        stats.external_only
    );
    report_written(&files);
    Ok(())
}

fn cmd_label(input: InputPaths, labeling: LabelRegime, out: PathBuf) -> Result<()> {
    #[derive(Serialize)]
    struct LabelRun<'a> {
        inputs: &'a InputPaths,
        labeling: LabelRegime,
    }
    let data = load_scenario(&input)?;
    let labeler = Labeler::new(&data.spec, labeling).context("label")?;
    let mut body = String::from("ts,orig_h,orig_p,dest_h,dest_p,proto,label\n");
    let mut malicious = 0usize;
    for r in &data.records {
        let l = labeler.label(r);
        malicious += usize::from(l.is_malicious());
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{}",
            r.ts,
            r.orig_h,
            r.orig_p,
            r.dest_h,
            r.dest_p,
            r.proto,
            l.as_u8()
        );
    }
    let mut staged = Staged::new(&out)?;
    staged.write(
        format!("{}.labels.csv", data.id()),
        with_header(&header("label", &LabelRun { inputs: &input, labeling })?, &body),
    )?;
    let files = staged.commit()?;
    println!("{}: {} records, {} malicious ({labeling})", data.id(), data.records.len(), malicious);
    report_written(&files);
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Usage(format!("file not found: {}", path.display())).into());
    }
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct TrainRun {
    features: Vec<PathBuf>,
    seed: u64,
    params: HyperParams,
    folds: Option<usize>,
    grid: Option<ParamGrid>,
    grid_result: Option<GridResult>,
    rows: usize,
    columns: usize,
    schema_fingerprint: String,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    features: Vec<PathBuf>,
    params_file: Option<PathBuf>,
    default_grid: bool,
    grid_file: Option<PathBuf>,
    folds: usize,
    seed: u64,
    model_args: ModelArgs,
    out: PathBuf,
) -> Result<()> {
    let mut params: HyperParams = match &params_file {
        Some(p) => read_toml(p)?,
        None => HyperParams::default(),
    };
    params.seed = seed;
    model_args.apply(&mut params)?;
    let grid = match (&grid_file, default_grid) {
        (Some(p), _) => Some(read_toml::<ParamGrid>(p)?),
        (None, true) => Some(match params.family() {
            botflow::models::Family::Logreg => ParamGrid::default_logreg(),
            botflow::models::Family::RandomForest => ParamGrid::default_random_forest(),
            botflow::models::Family::GradientBoosting => ParamGrid::default_gradient_boosting(),
        }),
        (None, false) => None,
    };
    let mut parts = Vec::new();
    for f in &features {
        if !f.is_file() {
            return Err(Usage(format!("feature file not found: {}", f.display())).into());
        }
        let file = std::fs::File::open(f)?;
        parts.push(FeatureMatrix::read_csv(file).with_context(|| format!("reading {}", f.display()))?);
    }
    let refs: Vec<&FeatureMatrix> = parts.iter().collect();
    let x = FeatureMatrix::concat(&refs).context("features")?;
    let grid_result = match &grid {
        Some(g) => {
            let r = grid_search_weighted(&x, g, folds, seed, params.class_weight).context("grid search")?;
            println!("grid: best mean F1 {:.4} over {} cells", r.best_f1, r.cells.len());
            params = r.best.clone();
            Some(r)
        }
        None => None,
    };
    let model = train(&x, &params).context("train")?;
    let run = TrainRun {
        features: features.iter().map(|p| absolute(p)).collect(),
        seed,
        params: params.clone(),
        folds: grid.as_ref().map(|_| folds),
        grid,
        grid_result,
        rows: x.n_rows(),
        columns: x.n_cols(),
        schema_fingerprint: x.schema().fingerprint(),
    };
    let mut staged = Staged::new(&out)?;
    staged.write("model.json", serialize(&model)?)?;
    staged.write("train.json", serde_json::to_string_pretty(&run)? + "\n")?;
    let files = staged.commit()?;
    let (neg, pos) = x.class_counts();
    println!(
        "trained {} on {} rows ({neg} legitimate, {pos} malicious) x {} columns",
        params.family(),
        x.n_rows(),
        x.n_cols()
    );
    report_written(&files);
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<BTreeMap<String, ScenarioData>> {
    let mut data = BTreeMap::new();
    for (id, paths) in &cfg.inputs {
        let d = load_scenario(paths)?;
        if d.id() != id {
            log::warn!("scenario `{id}`: manifest names it `{}`", d.id());
        }
        data.insert(id.clone(), d);
    }
    Ok(data)
}

/// Evaluates every requested split of `spec`, grid-searching on each
/// training split when the config has a grid. Splits run in parallel.
fn run_splits(
    cfg: &RunConfig,
    spec: &ExperimentSpec,
    data: &BTreeMap<String, ScenarioData>,
) -> Result<Vec<(EvalReport, Option<GridResult>)>> {
    let matrices = featurize_scenarios(spec, data)?;
    let tests: Vec<String> =
        if cfg.all_splits { spec.scenarios.clone() } else { vec![spec.test_scenario.clone()] };
    let runs = par::map(&tests, |t| -> botflow::Result<(EvalReport, Option<GridResult>)> {
        let mut s = spec.with_test(t);
        let grid = match &cfg.grid {
            Some(g) => {
                let (train_m, _) = scenario_split(&matrices, t)?;
                let r = grid_search_weighted(&train_m, g, cfg.folds, s.params.seed, s.params.class_weight)
                    .map_err(|e| e.in_stage("grid search"))?;
                s.params = r.best.clone();
                Some(r)
            }
            None => None,
        };
        Ok((evaluate(&s, &matrices)?, grid))
    });
    runs.into_iter().map(|r| r.map_err(anyhow::Error::from)).collect()
}

fn stage_report(
    staged: &mut Staged,
    hdr: &str,
    tag: &str,
    report: &EvalReport,
    grid: &Option<GridResult>,
) -> Result<()> {
    staged.write(format!("report-{tag}.json"), report.to_json()?)?;
    staged.write(format!("pr_curve-{tag}.csv"), with_header(hdr, &report.pr_curve_csv()))?;
    staged.write(format!("importance-{tag}.csv"), with_header(hdr, &report.importance_csv()))?;
    if let Some(g) = grid {
        staged.write(format!("grid-{tag}.json"), serde_json::to_string_pretty(g)? + "\n")?;
    }
    Ok(())
}

fn cmd_experiment(cfg: RunConfig, out: PathBuf) -> Result<()> {
    let data = load_data(&cfg)?;
    let runs = run_splits(&cfg, &cfg.experiment, &data)?;
    let hdr = header("experiment", &cfg)?;
    let mut staged = Staged::new(&out)?;
    staged.write("config.json", serde_json::to_string_pretty(&cfg)? + "\n")?;
    for (r, g) in &runs {
        stage_report(&mut staged, &hdr, &r.config.test_scenario, r, g)?;
    }
    let reports: Vec<EvalReport> = runs.into_iter().map(|p| p.0).collect();
    staged.write("summary.csv", with_header(&hdr, &summary_csv(&reports)))?;
    let files = staged.commit()?;
    for r in &reports {
        println!(
            "test {}: F1 {:.4} precision {:.4} recall {:.4}",
            r.config.test_scenario, r.f1, r.precision, r.recall
        );
    }
    report_written(&files);
    Ok(())
}

fn cmd_sweep(cfg: RunConfig, out: PathBuf) -> Result<()> {
    if let Some(w) = cfg.windows.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Usage(format!("window length must be positive, got {w}")).into());
    }
    let data = load_data(&cfg)?;
    let hdr = header("sweep", &cfg)?;
    let mut staged = Staged::new(&out)?;
    staged.write("config.json", serde_json::to_string_pretty(&cfg)? + "\n")?;
    let mut reports = Vec::new();
    for &w in &cfg.windows {
        let spec = ExperimentSpec { window_len: w, ..cfg.experiment.clone() };
        for (r, g) in run_splits(&cfg, &spec, &data)? {
            stage_report(&mut staged, &hdr, &format!("w{w}-{}", r.config.test_scenario), &r, &g)?;
            println!("window {w} test {}: F1 {:.4}", r.config.test_scenario, r.f1);
            reports.push(r);
        }
    }
    staged.write("summary.csv", with_header(&hdr, &summary_csv(&reports)))?;
    staged.write("f1_by_window.csv", with_header(&hdr, &f1_by_window_csv(&reports)))?;
    let files = staged.commit()?;
    report_written(&files);
    Ok(())
}

fn cmd_synth(
    preset: Option<String>,
    params_file: Option<PathBuf>,
    id: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
) -> Result<()> {
    let mut params = match (&preset, &params_file) {
        (Some(name), _) => {
            if !PRESETS.contains(&name.as_str()) {
                return Err(Usage(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                ))
                .into());
            }
            let seed = seed.ok_or_else(|| Usage("--seed is required with --preset".into()))?;
            let id = id.clone().unwrap_or_else(|| format!("{name}-{seed}"));
            SynthParams::preset(name, &id, seed)?
        }
        (None, Some(path)) => {
            if !path.is_file() {
                return Err(Usage(format!("file not found: {}", path.display())).into());
            }
            let text = std::fs::read_to_string(path)?;
            let p: SynthParams = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            };
            p
        }
        (None, None) => return Err(Usage("give --preset or --params".into()).into()),
    };
    if params_file.is_some() {
        if let Some(s) = seed {
            params.seed = s;
        }
        if let Some(i) = id {
            params.scenario_id = i;
        }
    }
    params.validate().map_err(|e| Usage(e.to_string()))?;
    let s = generate(&params).context("synth")?;
    let dir = PathBuf::from(&params.scenario_id);
    let mut staged = Staged::new(&out)?;
    staged.write(dir.join(config::CONN_LOG), s.conn_log())?;
    staged.write(dir.join(config::MANIFEST), s.manifest())?;
    let files = staged.commit()?;
    println!(
        "{}: {} records, {} bots, {} victims",
        params.scenario_id,
        s.records.len(),
        s.spec.botnet_ips.len(),
        s.spec.victim_ips.len()
    );
    report_written(&files);
    Ok(())
}

fn cmd_importance(model_path: &Path, top: Option<usize>, out: PathBuf) -> Result<()> {
    #[derive(Serialize)]
    struct ImportanceRun<'a> {
        model: PathBuf,
        params: &'a HyperParams,
        schema_fingerprint: &'a str,
        top: Option<usize>,
    }
    if !model_path.is_file() {
        return Err(Usage(format!("model file not found: {}", model_path.display())).into());
    }
    let bytes = std::fs::read(model_path)?;
    let model = deserialize(&bytes).with_context(|| format!("loading {}", model_path.display()))?;
    let mut ranked = feature_importance(&model);
    if let Some(n) = top {
        ranked.truncate(n);
    }
    let run = ImportanceRun {
        model: absolute(model_path),
        params: &model.params,
        schema_fingerprint: &model.fingerprint,
        top,
    };
    let mut body = String::from("rank,feature,importance\n");
    for (i, (f, v)) in ranked.iter().enumerate() {
        let _ = writeln!(body, "{},{f},{v}", i + 1);
    }
    let mut staged = Staged::new(&out)?;
    staged.write("importance.csv", with_header(&header("importance", &run)?, &body))?;
    let files = staged.commit()?;
    for (i, (f, v)) in ranked.iter().take(10).enumerate() {
        println!("{:>3}  {v:.6}  {f}", i + 1);
    }
    report_written(&files);
    Ok(())
}
