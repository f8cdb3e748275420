//! End-to-end tests of the `lbcf` binary: every subcommand, exit codes,
//! manifest replay, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lbcf::dataset::{load_rct_csv, CsvSchema};

fn lbcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbcf"))
        .args(args)
        .output()
        .expect("binary must run")
}

fn run_ok(args: &[&str]) -> String {
    let out = lbcf(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_err(args: &[&str], expected_code: i32) -> String {
    let out = lbcf(args);
    assert_eq!(
        out.status.code(),
        Some(expected_code),
        "command {:?} should exit {expected_code}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn generate(dir: &Path, n: usize, k: usize, seed: u64, weight: f64) -> PathBuf {
    let out = dir.join(format!("gen-{n}-{k}-{seed}"));
    run_ok(&[
        "generate",
        "--n",
        &n.to_string(),
        "--k",
        &k.to_string(),
        "--seed",
        &seed.to_string(),
        "--weight",
        &weight.to_string(),
        "-o",
        out.to_str().unwrap(),
    ]);
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_deterministic_and_manifested() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let stdout = run_ok(&[
            "--threads",
            "2",
            "generate",
            "--n",
            "400",
            "--k",
            "2",
            "--seed",
            "3",
            "--weight",
            "0.5",
            "-o",
            path_str(out),
        ]);
        assert!(stdout.contains("rows = 400"), "stdout: {stdout}");
        assert!(stdout.contains("arms = 3"));
    }
    assert_eq!(
        std::fs::read(a.join("data.csv")).unwrap(),
        std::fs::read(b.join("data.csv")).unwrap(),
        "same seed must produce identical data bytes"
    );
    assert_eq!(
        std::fs::read(a.join("data.truth.csv")).unwrap(),
        std::fs::read(b.join("data.truth.csv")).unwrap()
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["params"]["n"], 400);
    assert_eq!(manifest["params"]["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    let keys: Vec<&String> = manifest.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        ["command", "inputs", "outputs", "params", "tool_version"]
            .iter()
            .collect::<Vec<_>>(),
        "manifest must hold exactly the reproducibility fields (no timestamps)"
    );
}

#[test]
fn train_same_seed_gives_byte_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 500, 2, 5, 1.0);
    let data_csv = data.join("data.csv");
    let t1 = dir.path().join("t1");
    let t2 = dir.path().join("t2");
    for out in [&t1, &t2] {
        let stdout = run_ok(&[
            "train",
            "--data",
            path_str(&data_csv),
            "--trees",
            "6",
            "--max-depth",
            "4",
            "--min-leaf",
            "8",
            "--seed",
            "7",
            "-o",
            path_str(out),
        ]);
        assert!(stdout.contains("tree 0: depth"), "stdout: {stdout}");
        assert!(stdout.contains("model_type = udcf"));
    }
    assert_eq!(
        std::fs::read(t1.join("model.json")).unwrap(),
        std::fs::read(t2.join("model.json")).unwrap(),
        "same data and seed must produce identical model bytes"
    );
}

#[test]
fn root_only_training_recovers_global_difference_in_means() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = generate(dir.path(), 300, 2, 9, 1.0);
    let data_csv = data_dir.join("data.csv");
    let out = dir.path().join("leaf");
    run_ok(&[
        "train",
        "--data",
        path_str(&data_csv),
        "--trees",
        "1",
        "--max-depth",
        "0",
        "--subsample",
        "1.0",
        "--ridge",
        "0",
        "-o",
        path_str(&out),
    ]);
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let nodes = model["trees"][0]["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 1, "depth 0 must give a single leaf");
    let theta: Vec<f64> = nodes[0]["theta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    let data = load_rct_csv(&data_csv, &CsvSchema::default()).unwrap();
    let mut sums = vec![0.0f64; 3];
    let mut counts = vec![0usize; 3];
    for i in 0..data.n_samples() {
        let arm = data.treatment(i) as usize;
        sums[arm] += data.outcome(i);
        counts[arm] += 1;
    }
    let control = sums[0] / counts[0] as f64;
    for j in 1..=2 {
        let diff = sums[j] / counts[j] as f64 - control;
        assert!(
            (theta[j - 1] - diff).abs() <= 1e-10,
            "arm {j}: model {} vs direct {}",
            theta[j - 1],
            diff
        );
    }
}

fn write_worked_problem(dir: &Path) -> PathBuf {
    let path = dir.join("problem.csv");
    std::fs::write(
        &path,
        "id,theta_1,theta_2,cost_1,cost_2\n\
         1,20,30,1,2\n\
         2,15,36,1,2\n\
         3,15,32,1,2\n\
         4,4,2,1,2\n\
         5,3,6,1,2\n\
         6,2,2,1,2\n",
    )
    .unwrap();
    path
}

#[test]
fn allocate_reports_the_worked_instance() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_worked_problem(dir.path());
    let out = dir.path().join("alloc");
    let stdout = run_ok(&[
        "allocate",
        "--problem",
        path_str(&problem),
        "--budget",
        "6",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("total_value = 98"), "stdout: {stdout}");
    assert!(stdout.contains("total_cost = 6"));
    assert!(stdout.contains("repaired = false"));
    let text = std::fs::read_to_string(out.join("assignment.csv")).unwrap();
    let chosen: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(chosen, ["2", "2", "2", "0", "0", "0"]);

    let stdout = run_ok(&[
        "allocate",
        "--problem",
        path_str(&problem),
        "--budget",
        "6",
        "--policy",
        "roi-greedy",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("total_value = 92"), "stdout: {stdout}");
}

#[test]
fn allocate_rejects_bad_budgets_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_worked_problem(dir.path());
    let out = dir.path().join("alloc");
    for budget in ["--budget=0", "--budget=-3"] {
        let stderr = run_err(
            &[
                "allocate",
                "--problem",
                path_str(&problem),
                budget,
                "-o",
                path_str(&out),
            ],
            2,
        );
        assert!(stderr.contains("budget"), "stderr: {stderr}");
    }
}

#[test]
fn allocate_notices_slack_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_worked_problem(dir.path());
    let out = dir.path().join("alloc");
    let stdout = run_ok(&[
        "allocate",
        "--problem",
        path_str(&problem),
        "--budget",
        "1e12",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("budget_binding = false"));
    assert!(stdout.contains("constraint is slack"), "stdout: {stdout}");
    // Everyone gets their highest-effect arm (2,2,2,1,2,1), worth
    // 30 + 36 + 32 + 4 + 6 + 2.
    assert!(stdout.contains("n_treated = 6"));
    assert!(stdout.contains("total_value = 110"), "stdout: {stdout}");
}

#[test]
fn evaluate_identity_policy_matches_direct_average() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = generate(dir.path(), 600, 2, 1, 1.0);
    let data_csv = data_dir.join("data.csv");
    let data = load_rct_csv(&data_csv, &CsvSchema::default()).unwrap();

    // Assign every user the arm the trial actually gave them.
    let assignment_path = dir.path().join("assignment.csv");
    let mut text = String::from("id,chosen_treatment,margin\n");
    for i in 0..data.n_samples() {
        text.push_str(&format!("{},{},0\n", data.ids()[i], data.treatment(i)));
    }
    std::fs::write(&assignment_path, text).unwrap();

    let out = dir.path().join("eval");
    let stdout = run_ok(&[
        "evaluate",
        "--assignment",
        path_str(&assignment_path),
        "--data",
        path_str(&data_csv),
        "--metric",
        "pmg",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("pmg = "), "stdout: {stdout}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap())
            .unwrap();
    assert_eq!(report["metric_kind"], "pmg");
    let pmg = report["evaluation"]["pmg"].as_f64().unwrap();

    let overall = data.outcomes().iter().sum::<f64>() / data.n_samples() as f64;
    let control: Vec<f64> = (0..data.n_samples())
        .filter(|&i| data.treatment(i) == 0)
        .map(|i| data.outcome(i))
        .collect();
    let mu0 = control.iter().sum::<f64>() / control.len() as f64;
    let expected = (overall - mu0) / mu0;
    assert!(
        (pmg - expected).abs() <= 1e-12,
        "pmg {pmg} vs direct {expected}"
    );

    // The ground-truth estimator runs on the same assignment via the
    // default truth path.
    let stdout = run_ok(&[
        "evaluate",
        "--assignment",
        path_str(&assignment_path),
        "--data",
        path_str(&data_csv),
        "--metric",
        "ite",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("tau_syn = "), "stdout: {stdout}");
}

#[test]
fn evaluate_reports_missing_overlap_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("tiny.csv");
    let mut text = String::from("id,x1,x2,treatment,outcome,cost_1,cost_2\n");
    for i in 0..9 {
        text.push_str(&format!("{i},{},{},{},{},1,2\n", i, i * 2, i % 3, i + 1));
    }
    std::fs::write(&data_path, text).unwrap();

    // Only one user is assigned arm 2, and that user sat in the control arm.
    let assignment_path = dir.path().join("assignment.csv");
    let mut text = String::from("id,chosen_treatment,margin\n");
    text.push_str("0,2,0\n");
    for i in 1..9 {
        text.push_str(&format!("{i},0,0\n"));
    }
    std::fs::write(&assignment_path, text).unwrap();

    let out = dir.path().join("eval");
    let stderr = run_err(
        &[
            "evaluate",
            "--assignment",
            path_str(&assignment_path),
            "--data",
            path_str(&data_path),
            "--metric",
            "pmg",
            "-o",
            path_str(&out),
        ],
        1,
    );
    assert!(stderr.contains("treatment 2"), "stderr: {stderr}");
    assert!(stderr.contains("no overlap"), "stderr: {stderr}");
}

#[test]
fn sweep_writes_the_full_grid_and_replays_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = generate(dir.path(), 800, 2, 2, 1.0);
    let data_csv = data_dir.join("data.csv");

    let udcf_dir = dir.path().join("udcf");
    run_ok(&[
        "train",
        "--data",
        path_str(&data_csv),
        "--trees",
        "5",
        "--max-depth",
        "4",
        "--min-leaf",
        "8",
        "-o",
        path_str(&udcf_dir),
    ]);
    let mbcf_dir = dir.path().join("mbcf");
    run_ok(&[
        "train",
        "--data",
        path_str(&data_csv),
        "--model-type",
        "mbcf",
        "--trees",
        "5",
        "--max-depth",
        "4",
        "--min-leaf",
        "8",
        "-o",
        path_str(&mbcf_dir),
    ]);

    let out = dir.path().join("sweep");
    let stdout = run_ok(&[
        "sweep",
        "--data",
        path_str(&data_csv),
        "--model",
        path_str(&udcf_dir.join("model.json")),
        "--mbcf-model",
        path_str(&mbcf_dir.join("model.json")),
        "--budgets",
        "50,100,200,400,800",
        "--metric",
        "ite",
        "-o",
        path_str(&out),
    ]);
    assert!(stdout.contains("rows = 20"), "stdout: {stdout}");

    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 21, "header plus 4 policies x 5 budgets");
    assert_eq!(
        lines[0],
        "budget,policy,metric_kind,metric,consumed_budget,n_treated,error"
    );
    for name in ["dgb", "roi-greedy", "max-uplift", "mbcf-dgb"] {
        assert!(
            lines.iter().filter(|l| l.split(',').nth(1) == Some(name)).count() == 5,
            "policy {name} must appear once per budget"
        );
    }

    // Replaying the written manifest reproduces the outputs byte for byte.
    let before = std::fs::read(out.join("sweep.csv")).unwrap();
    let manifest_path = out.join("run.json");
    let replay_config = dir.path().join("replay.json");
    std::fs::copy(&manifest_path, &replay_config).unwrap();
    run_ok(&["sweep", "--config", path_str(&replay_config)]);
    let after = std::fs::read(out.join("sweep.csv")).unwrap();
    assert_eq!(before, after, "manifest replay must be byte-identical");
}

#[test]
fn config_file_values_yield_to_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"n": 500, "k": 2, "seed": 4, "weight": 0.0, "out": "{}"}}"#,
            out.display()
        ),
    )
    .unwrap();
    let stdout = run_ok(&[
        "generate",
        "--config",
        path_str(&config_path),
        "--n",
        "300",
    ]);
    assert!(stdout.contains("rows = 300"), "flag must beat config file");
    assert!(stdout.contains("arms = 3"), "k comes from the config file");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["n"], 300);
    assert_eq!(manifest["params"]["k"], 2);
    assert_eq!(manifest["params"]["weight"], 0.0);
}

#[test]
fn unknown_config_keys_are_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"bogus": 1}"#).unwrap();
    let stderr = run_err(
        &[
            "generate",
            "--config",
            path_str(&config_path),
            "-o",
            path_str(&dir.path().join("x")),
        ],
        2,
    );
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
}

#[test]
fn negative_weight_is_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let stderr = run_err(
        &[
            "generate",
            "--n",
            "100",
            "--weight=-0.5",
            "-o",
            path_str(&dir.path().join("x")),
        ],
        2,
    );
    assert!(stderr.contains("weight"), "stderr: {stderr}");
}
