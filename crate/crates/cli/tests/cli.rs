use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn botflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_botflow"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BOTFLOW_OUT_DIR")
        .env_remove("BOTFLOW_JOBS")
        .output()
        .expect("spawn botflow")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = r#"
kind = "{kind}"
scenario_id = "{id}"
n_background_hosts = 60
duration_s = 300.0
bot_count = 2
imbalance = 20.0
seed = {seed}
t_start = 1000.0
"#;

/// Three small scenarios under `root/data`.
fn small_set(root: &Path, kind: &str) -> Vec<String> {
    let mut ids = Vec::new();
    for i in 1..=3 {
        let id = format!("{kind}-{i}");
        let p = root.join(format!("{id}.toml"));
        let text =
            SMALL.replace("{kind}", kind).replace("{id}", &id).replace("{seed}", &(40 + i).to_string());
        fs::write(&p, text).unwrap();
        ok(&botflow(&["synth", "--params", p.to_str().unwrap(), "--out", "data"], root));
        ids.push(id);
    }
    ids
}

fn experiment_config(root: &Path, ids: &[String], extra: &str) -> PathBuf {
    let list = ids.iter().map(|i| format!("\"{i}\"")).collect::<Vec<_>>().join(", ");
    let text = format!(
        r#"seed = 3
data_dir = "data"
{extra}

[experiment]
botnet = "synthetic"
scenarios = [{list}]
test_scenario = "{}"
representation = "traffic"
window_len = 30

[experiment.params]
family = "random_forest"
n_trees = 10
"#,
        ids[0]
    );
    let p = root.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_preset_writes_two_files() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&botflow(&["synth", "--preset", "spam", "--seed", "1", "--id", "s", "--out", "o"], tmp.path()));
    let files = read_dir_sorted(&tmp.path().join("o/s"));
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["conn.log", "manifest.txt"]);
    let manifest = String::from_utf8(files[1].1.clone()).unwrap();
    assert!(!manifest.contains("victim_ips"));
    // no staging directories left behind
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn ddos_manifest_lists_victims() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&botflow(&["synth", "--preset", "ddos", "--seed", "2", "--id", "d", "--out", "o"], tmp.path()));
    let manifest = fs::read_to_string(tmp.path().join("o/d/manifest.txt")).unwrap();
    assert!(manifest.contains("victim_ips = "), "{manifest}");
}

#[test]
fn bad_preset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = botflow(&["synth", "--preset", "nope", "--seed", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn missing_manifest_exits_2_and_names_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("conn.log"), "").unwrap();
    let out = botflow(
        &["featurize", "--log", "conn.log", "--manifest", "gone.txt", "--rep", "traffic"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone.txt"));
}

#[test]
fn featurize_traffic_and_connection() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "spam");
    let dir = format!("data/{}", ids[0]);
    ok(&botflow(
        &["featurize", "--scenario", &dir, "--rep", "traffic", "--window", "30", "--out", "f"],
        tmp.path(),
    ));
    let csv = fs::read_to_string(tmp.path().join(format!("f/{}.features.csv", ids[0]))).unwrap();
    let mut lines = csv.lines();
    let hdr = lines.next().unwrap();
    assert!(hdr.starts_with("# botflow") && hdr.contains("\"window_len\":30.0"), "{hdr}");
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cols.len(), 3 + 726 + 1);
    assert_eq!(cols[cols.len() - 1], "label");
    assert!(cols.contains(&"out.smtp-25.orig_bytes.sum"));

    // rerun is byte-identical
    ok(&botflow(&["featurize", "--scenario", &dir, "--rep", "traffic", "--out", "g"], tmp.path()));
    let again = fs::read_to_string(tmp.path().join(format!("g/{}.features.csv", ids[0]))).unwrap();
    assert_eq!(csv, again);

    // connection rows: one per in-bounds record with an internal endpoint
    ok(&botflow(&["featurize", "--scenario", &dir, "--rep", "connection", "--out", "c"], tmp.path()));
    let conn = fs::read_to_string(tmp.path().join(format!("c/{}.features.csv", ids[0]))).unwrap();
    let rows = conn.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let data = botflow::ScenarioData::load(
        &tmp.path().join(&dir).join("conn.log"),
        &tmp.path().join(&dir).join("manifest.txt"),
    )
    .unwrap();
    let expected = data
        .records
        .iter()
        .filter(|r| {
            data.spec.in_bounds(r.ts)
                && (data.spec.is_internal(&r.orig_h) || data.spec.is_internal(&r.dest_h))
        })
        .count();
    assert_eq!(rows, expected);
}

#[test]
fn label_writes_one_row_per_record() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&botflow(&["synth", "--preset", "ddos", "--seed", "5", "--id", "d", "--out", "data"], tmp.path()));
    ok(&botflow(&["label", "--scenario", "data/d", "--labeling", "fine", "--out", "l"], tmp.path()));
    let text = fs::read_to_string(tmp.path().join("l/d.labels.csv")).unwrap();
    let records = fs::read_to_string(tmp.path().join("data/d/conn.log"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    assert!(text.starts_with("# botflow"));
    assert_eq!(text.lines().count(), records + 2);
    assert!(text.lines().skip(2).any(|l| l.ends_with(",1")));
}

#[test]
fn train_then_importance() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "spam");
    for id in &ids[..2] {
        ok(&botflow(
            &["featurize", "--scenario", &format!("data/{id}"), "--rep", "traffic", "--out", "f"],
            tmp.path(),
        ));
    }
    let f1 = format!("f/{}.features.csv", ids[0]);
    let f2 = format!("f/{}.features.csv", ids[1]);
    ok(&botflow(
        &[
            "train",
            "--features",
            &f1,
            &f2,
            "--family",
            "gbt",
            "--n-estimators",
            "10",
            "--seed",
            "4",
            "--out",
            "m",
        ],
        tmp.path(),
    ));
    let model = fs::read(tmp.path().join("m/model.json")).unwrap();
    let m = botflow::models::deserialize(&model).unwrap();
    assert_eq!(m.family().as_str(), "gradient_boosting");
    assert!(fs::read_to_string(tmp.path().join("m/train.json")).unwrap().contains("\"n_estimators\": 10"));

    ok(&botflow(&["importance", "--model", "m/model.json", "--top", "5", "--out", "i"], tmp.path()));
    let imp = fs::read_to_string(tmp.path().join("i/importance.csv")).unwrap();
    assert_eq!(imp.lines().count(), 1 + 1 + 5);

    let out =
        botflow(&["train", "--features", &f1, "--family", "lr", "--n-trees", "3", "--seed", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_grid_search() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "spam");
    ok(&botflow(
        &["featurize", "--scenario", &format!("data/{}", ids[0]), "--rep", "traffic", "--out", "f"],
        tmp.path(),
    ));
    fs::write(
        tmp.path().join("grid.toml"),
        "family = \"random_forest\"\nn_trees = [2, 4]\nmax_depth = [3]\n",
    )
    .unwrap();
    let f = format!("f/{}.features.csv", ids[0]);
    ok(&botflow(
        &["train", "--features", &f, "--grid-file", "grid.toml", "--folds", "2", "--seed", "1", "--out", "m"],
        tmp.path(),
    ));
    let run = fs::read_to_string(tmp.path().join("m/train.json")).unwrap();
    assert!(run.contains("grid_result") && run.contains("mean_f1"));
}

#[test]
fn experiment_reports_and_rerun_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "spam");
    let cfg = experiment_config(tmp.path(), &ids, "all_splits = true");
    ok(&botflow(&["experiment", cfg.to_str().unwrap(), "--out", "r1"], tmp.path()));
    ok(&botflow(&["experiment", cfg.to_str().unwrap(), "--out", "r2", "--jobs", "1"], tmp.path()));
    let a = read_dir_sorted(&tmp.path().join("r1"));
    let b = read_dir_sorted(&tmp.path().join("r2"));
    assert_eq!(a, b);
    let reports = a.iter().filter(|f| f.0.starts_with("report-")).count();
    assert_eq!(reports, 3);
    for kind in ["pr_curve-", "importance-"] {
        assert_eq!(a.iter().filter(|f| f.0.starts_with(kind)).count(), 3);
    }
    let summary = String::from_utf8(a.iter().find(|f| f.0 == "summary.csv").unwrap().1.clone()).unwrap();
    assert_eq!(summary.lines().count(), 1 + 1 + 3);
    assert!(summary.starts_with("# botflow") && summary.contains("\"seed\":3"));
    let report = String::from_utf8(a.iter().find(|f| f.0.starts_with("report-")).unwrap().1.clone()).unwrap();
    let parsed = botflow::EvalReport::from_json(&report).unwrap();
    assert_eq!(parsed.config.params.seed, 3);
}

#[test]
fn flags_override_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "ddos");
    let cfg = experiment_config(tmp.path(), &ids, "");
    ok(&botflow(
        &[
            "experiment",
            cfg.to_str().unwrap(),
            "--labeling",
            "fine",
            "--test",
            &ids[2],
            "--window",
            "60",
            "--seed",
            "11",
            "--out",
            "r",
        ],
        tmp.path(),
    ));
    let files = read_dir_sorted(&tmp.path().join("r"));
    let report = files.iter().find(|f| f.0.starts_with("report-")).unwrap();
    assert_eq!(report.0, format!("report-{}.json", ids[2]));
    let r = botflow::EvalReport::from_json(std::str::from_utf8(&report.1).unwrap()).unwrap();
    assert_eq!(r.config.labeling, botflow::LabelRegime::Fine);
    assert_eq!(r.config.window_len, 60.0);
    assert_eq!(r.config.params.seed, 11);
}

#[test]
fn sweep_writes_reports_per_window_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = small_set(tmp.path(), "spam");
    let cfg = experiment_config(tmp.path(), &ids, "all_splits = true\nwindows = [10, 60]");
    ok(&botflow(&["sweep", cfg.to_str().unwrap(), "--out", "s"], tmp.path()));
    let files = read_dir_sorted(&tmp.path().join("s"));
    assert_eq!(files.iter().filter(|f| f.0.starts_with("report-")).count(), 2 * 3);
    let f1 = String::from_utf8(files.iter().find(|f| f.0 == "f1_by_window.csv").unwrap().1.clone()).unwrap();
    assert_eq!(f1.lines().count(), 1 + 1 + 6);

    ok(&botflow(&["sweep", cfg.to_str().unwrap(), "--windows", "30", "--out", "t"], tmp.path()));
    let files = read_dir_sorted(&tmp.path().join("t"));
    assert_eq!(files.iter().filter(|f| f.0.starts_with("report-w30-")).count(), 3);
}

#[test]
fn missing_scenario_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = vec!["x-1".to_string(), "x-2".to_string()];
    let cfg = experiment_config(tmp.path(), &ids, "");
    let out = botflow(&["experiment", cfg.to_str().unwrap(), "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x-1"));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_botflow"))
        .args(["synth", "--preset", "spam", "--seed", "1", "--id", "e"])
        .current_dir(tmp.path())
        .env("BOTFLOW_OUT_DIR", "envout")
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("envout/e/conn.log").is_file());
}

#[test]
fn failed_stage_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&botflow(&["synth", "--preset", "spam", "--seed", "1", "--id", "s", "--out", "data"], tmp.path()));
    // spam scenarios have no victims, so fine labeling fails after ingest
    let out = botflow(&["featurize", "--scenario", "data/s", "--labeling", "fine", "--out", "f"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fine labeling unavailable"));
    assert!(!tmp.path().join("f").exists());
}
