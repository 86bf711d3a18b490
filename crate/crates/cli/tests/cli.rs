use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::tempdir;
use zest_core::store::load_store;

fn zest(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zest"))
        .args(args)
        .current_dir(dir)
        .env_remove("ZEST_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = zest(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let digest = Sha256::digest(fs::read(&path).unwrap());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        map.insert(path.file_name().unwrap().to_string_lossy().into_owned(), hex);
    }
    map
}

fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["gen-synth", "--out", name];
    args.extend_from_slice(extra);
    ok(&args, dir);
}

#[test]
fn gen_synth_writes_loadable_consistent_files() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &[]);
    let s = tmp.path().join("s");
    for f in [
        "store.embx",
        "store.manifest.jsonl",
        "ledger.jsonl",
        "goals_same.json",
        "goals_shifted.json",
        "action_classes.json",
        "run.json",
    ] {
        assert!(s.join(f).exists(), "{f} missing");
    }
    let store = load_store(&s.join("store.embx")).unwrap();
    let ledger_rows = fs::read_to_string(s.join("ledger.jsonl")).unwrap().lines().count() - 1;
    let manifest_rows = fs::read_to_string(s.join("store.manifest.jsonl"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(store.len(), 1000);
    assert_eq!(manifest_rows, ledger_rows);
    assert_eq!(store.len(), ledger_rows);

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(s.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["engine_version"], zest_core::ENGINE_VERSION);
    assert_eq!(run["config"]["task_count"], 5);
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"no_such_field": 1}"#).unwrap();
    let out = zest(&["gen-synth", "--config", "bad.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    fs::write(tmp.path().join("neg.json"), r#"{"noise_sigma": -1}"#).unwrap();
    let out = zest(&["gen-synth", "--config", "neg.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = zest(&["gen-synth", "--config", "missing.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_seed_env_exits_2() {
    let tmp = tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zest"))
        .args(["gen-synth", "--out", "x"])
        .current_dir(tmp.path())
        .env("ZEST_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_is_used_and_flag_wins() {
    let tmp = tempdir().unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_zest"));
        cmd.args(["gen-synth", "--out", out]).current_dir(tmp.path());
        cmd.env_remove("ZEST_SEED");
        if let Some(e) = env {
            cmd.env("ZEST_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.output().unwrap().status.success());
        hashes(&tmp.path().join(out))
    };
    let env4 = run("a", Some("4"), None);
    let flag4 = run("b", None, Some("4"));
    let env_and_flag = run("c", Some("9"), Some("4"));
    let zero = run("d", None, None);
    assert_eq!(env4, flag4);
    assert_eq!(env4, env_and_flag);
    assert_ne!(env4, zero);
}

#[test]
fn missing_labels_exit_3() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &[]);
    let s = tmp.path().join("s");
    let manifest = fs::read_to_string(s.join("store.manifest.jsonl")).unwrap();
    let stripped = manifest
        .replace(",\"goal_label\":false", "")
        .replace(",\"goal_label\":true", "");
    fs::write(s.join("store.manifest.jsonl"), stripped).unwrap();
    let out = zest(
        &[
            "evaluate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--out",
            "e",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = zest(
        &["evaluate", "--store", "nope.embx", "--goals", "s/goals_same.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn evaluate_reports_and_clamp_warning() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &[]);
    let out = zest(
        &[
            "evaluate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--n",
            "500",
            "--out",
            "e",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("clamping N"), "{stderr}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let agg = stdout.lines().last().unwrap();
    assert!(agg.starts_with("modality=synthetic model=synthgen"), "{agg}");
    assert!(agg.contains("avg=1.0000"), "{agg}");

    let e = tmp.path().join("e");
    let table = fs::read_to_string(e.join("table.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    assert_eq!(
        header,
        ["modality", "model", "knob2", "ldoor", "micro", "rdoor", "sdoor", "Avg.", "Std. Err"]
    );
    let report = fs::read_to_string(e.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows.len(), 1 + 5 + 1);
    assert!(rows.last().unwrap().starts_with("Avg."));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["engine_version"], zest_core::ENGINE_VERSION);
    assert!(json["config"].is_object());
}

fn aggregate_dtv(stdout: &str) -> f64 {
    let agg = stdout.lines().last().unwrap();
    let field = agg.split(' ').find_map(|f| f.strip_prefix("dtv=")).unwrap();
    field.parse().unwrap()
}

#[test]
fn delta_cosine_has_lower_dtv_than_raw_l2_on_shifted_goals() {
    let tmp = tempdir().unwrap();
    let (mut delta, mut raw) = (0.0, 0.0);
    for seed in ["0", "1", "2", "3", "4"] {
        let dir = format!("s{seed}");
        synth(tmp.path(), &dir, &["--seed", seed, "--sigma", "0.2", "--shift", "0.5"]);
        let store = format!("{dir}/store.embx");
        let goals = format!("{dir}/goals_shifted.json");
        for (metric, acc) in [("delta+cosine", &mut delta), ("raw+neg_l2", &mut raw)] {
            let args = [
                "evaluate",
                "--store",
                &store,
                "--goals",
                &goals,
                "--scenario",
                "DGDD",
                "--metric",
                metric,
                "--out",
                "e",
            ];
            *acc += aggregate_dtv(&ok(&args, tmp.path()));
        }
    }
    assert!(delta < raw, "delta {delta} raw {raw}");
}

#[test]
fn action_scenario_runs_from_files() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &[]);
    let stdout = ok(
        &[
            "evaluate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--action-classes",
            "s/action_classes.json",
            "--scenario",
            "ASDD",
            "--n",
            "mu",
            "--out",
            "e",
        ],
        tmp.path(),
    );
    assert!(stdout.lines().last().unwrap().contains("avg=1.0000"), "{stdout}");
}

#[test]
fn label_rewards_adds_unit_rewards() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &["--sigma", "0.1"]);
    ok(
        &[
            "label-rewards",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--out",
            "l",
        ],
        tmp.path(),
    );
    let text = fs::read_to_string(tmp.path().join("l/labeled.jsonl")).unwrap();
    let mut records = 0;
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let r = v["reward"].as_f64().expect("reward key");
        assert!((0.0..=1.0).contains(&r));
        records += 1;
    }
    assert_eq!(records, 1000);
}

fn accuracy(stdout: &str) -> f64 {
    let field = stdout
        .split_whitespace()
        .find_map(|f| f.strip_prefix("pairwise_accuracy="))
        .unwrap();
    field.parse().unwrap()
}

#[test]
fn trex_pipeline_reaches_accuracy_on_held_out_split() {
    let tmp = tempdir().unwrap();
    fs::write(
        tmp.path().join("synth.json"),
        r#"{"trajectories_per_task": 60, "noise_sigma": 0.05}"#,
    )
    .unwrap();
    synth(tmp.path(), "train", &["--config", "synth.json"]);
    synth(tmp.path(), "test", &["--config", "synth.json", "--split", "1"]);
    for task in ["knob2", "micro"] {
        ok(
            &[
                "train-trex",
                "--store",
                "train/store.embx",
                "--goals",
                "train/goals_same.json",
                "--task",
                task,
                "--out",
                "m",
            ],
            tmp.path(),
        );
        assert!(tmp.path().join("m/model.json").exists());
        let stdout = ok(
            &[
                "eval-trex",
                "--model",
                "m/model.json",
                "--store",
                "test/store.embx",
                "--ledger",
                "test/ledger.jsonl",
                "--task",
                task,
                "--out",
                "m",
            ],
            tmp.path(),
        );
        let acc = accuracy(&stdout);
        assert!(acc >= 0.85, "task {task}: {acc}");
    }
    let loss = fs::read_to_string(tmp.path().join("m/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 200);
}

#[test]
fn unknown_task_is_a_config_error() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &[]);
    let out = zest(
        &[
            "train-trex",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--task",
            "oven",
            "--out",
            "m",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

fn normalized_returns(stdout: &str) -> Vec<f64> {
    stdout
        .split_whitespace()
        .filter_map(|f| f.strip_prefix("normalized_return="))
        .map(|v| v.parse().unwrap())
        .collect()
}

#[test]
fn bc_prints_both_returns() {
    let tmp = tempdir().unwrap();
    let same = normalized_returns(&ok(&["bc", "--keep-fraction", "1", "--out", "b"], tmp.path()));
    assert_eq!(same.len(), 2);
    assert_eq!(same[0], same[1]);
    let filtered = normalized_returns(&ok(&["bc", "--keep-fraction", "0.25", "--out", "b"], tmp.path()));
    assert!(filtered[0] >= filtered[1], "{filtered:?}");

    let out = zest(&["bc", "--keep-fraction", "0", "--out", "b"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_emits_five_rows_and_zero_stderr_at_pool_size() {
    let tmp = tempdir().unwrap();
    synth(tmp.path(), "s", &["--sigma", "0.3"]);
    let stdout = ok(
        &[
            "ablate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--k",
            "1,5,10,25,50",
            "--out",
            "a",
        ],
        tmp.path(),
    );
    assert_eq!(stdout.lines().count(), 5);
    let csv = fs::read_to_string(tmp.path().join("a/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("k,mean,std_err"), "{header}");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][0], "50");
    assert_eq!(rows[4][2].parse::<f64>().unwrap(), 0.0);
    assert!(stdout.lines().all(|l| l.ends_with("repeats=5")));

    let out = zest(
        &[
            "ablate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--k",
            "51",
            "--out",
            "a",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_command_is_byte_deterministic() {
    let tmp = tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("small.json"),
        r#"{"task_count": 2, "trajectories_per_task": 6, "noise_sigma": 0.2}"#,
    )
    .unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["gen-synth", "--config", "small.json", "--seed", "3"],
        vec![
            "evaluate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--repeats",
            "3",
            "--goal-samples",
            "5",
        ],
        vec![
            "label-rewards",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
        ],
        vec![
            "train-trex",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--epochs",
            "5",
        ],
        vec![
            "eval-trex",
            "--model",
            "s/model.json",
            "--store",
            "s/store.embx",
            "--ledger",
            "s/ledger.jsonl",
            "--pairs",
            "50",
        ],
        vec!["bc", "--trajectories", "30", "--episodes", "5", "--seed", "2"],
        vec![
            "ablate",
            "--store",
            "s/store.embx",
            "--goals",
            "s/goals_same.json",
            "--k",
            "1,50",
        ],
    ];
    fs::create_dir(d.join("s")).unwrap();
    for args in &runs {
        let mut first = args.clone();
        first.extend(["--out", "s"]);
        let stdout_a = ok(&first, d);
        let a = hashes(&d.join("s"));
        let mut second = args.clone();
        second.extend(["--out", "again"]);
        let stdout_b = ok(&second, d);
        let b = hashes(&d.join("again"));
        for (name, hash) in &b {
            assert_eq!(a.get(name), Some(hash), "{args:?}: {name} differs");
        }
        assert_eq!(
            stdout_a.replace("again", "s"),
            stdout_b.replace("again", "s"),
            "{args:?}"
        );
        fs::remove_dir_all(d.join("again")).unwrap();
    }
}
