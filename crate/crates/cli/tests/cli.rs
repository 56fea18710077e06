//! End-to-end coverage of the `sm2` binary: exit codes, artifacts and the
//! run/report/compare pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn sm2(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sm2"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

const SMALL_RUN: &str = r#"
batch_candidates = [8, 16, 32, 64]

[run]
seed = 7

[run.stop]
max_rounds = 4

[budget]
thorough_epochs_per_round = 2
final_thorough_epochs = 3

[lr_grid]
count = 8
window_size = 3

[data]
n_samples = 2560
separation = 2.5
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_prints_effective_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.toml", "[run]\nseed = 42\n");
    // The default candidate set needs a large dataset; the minimal config
    // passes validation because the default n_samples accounts for it.
    let out = sm2(&["validate", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lr_grid.count = 20"), "{stdout}");
    assert!(stdout.contains("objective.alpha = 0.75"), "{stdout}");
    assert!(stdout.contains("method default"), "{stdout}");
    assert!(stdout.contains("fingerprint = "), "{stdout}");
}

#[test]
fn validate_rejects_bad_alpha_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        "[run]\nseed = 1\n[objective]\nalpha = 1.5\n",
    );
    let out = sm2(&["validate", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("alpha"), "{stderr}");
    assert!(stderr.contains("[0, 1]"), "{stderr}");
}

#[test]
fn validate_rejects_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.toml", "\n");
    let out = sm2(&["validate", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn validate_rejects_non_multiple_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "div.toml",
        "batch_candidates = [8, 12]\n[run]\nseed = 1\n",
    );
    let out = sm2(&["validate", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("multiple"), "{stderr}");
}

#[test]
fn validate_rejects_missing_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "csv.toml",
        "[run]\nseed = 1\n[trainer]\nkind = \"linear_regression\"\n[data]\nsource = \"csv\"\ncsv_path = \"nope.csv\"\ntarget_columns = [\"y\"]\n",
    );
    let out = sm2(&["validate", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn run_report_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);

    // Full run.
    let out = sm2(&["run", "--config", &cfg, "--out", "out_sm2"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final config:"), "{stdout}");
    assert!(stdout.contains("total energy (Wh):"), "{stdout}");
    let ledger = dir.path().join("out_sm2/ledger.jsonl");
    assert!(ledger.exists());
    assert!(dir.path().join("out_sm2/run_summary.txt").exists());

    // Exactly one final selection in the ledger.
    let text = std::fs::read_to_string(&ledger).unwrap();
    let finals = text.lines().filter(|l| l.contains("\"final_selection\"")).count();
    assert_eq!(finals, 1);
    let headers = text.lines().filter(|l| l.contains("\"run_header\"")).count();
    assert_eq!(headers, 1);

    // Report from the ledger alone.
    let out = sm2(
        &["report", "--ledger", "out_sm2/ledger.jsonl", "--out", "rep"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("rep/run_summary.txt").exists());
    let traces = std::fs::read_dir(dir.path().join("rep"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("config")
        })
        .count();
    assert_eq!(traces, 4, "one trace file per configuration");

    // alpha = 1 run over the same experiment.
    let alpha1_cfg = write_config(
        dir.path(),
        "alpha1.toml",
        &format!("{SMALL_RUN}\n[objective]\nalpha = 1.0\n"),
    );
    let out = sm2(
        &["run", "--config", &alpha1_cfg, "--out", "out_a1"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Vanilla baseline: same data/trainer/seed, single candidate.
    let vanilla_cfg = write_config(
        dir.path(),
        "vanilla.toml",
        r#"
batch_candidates = [32]

[run]
seed = 7
variant = "vanilla"
vanilla_lr = 0.05

[run.stop]
max_rounds = 2

[budget]
final_thorough_epochs = 5

[lr_grid]
count = 8
window_size = 3

[data]
n_samples = 2560
separation = 2.5
"#,
    );
    let out = sm2(
        &["run", "--config", &vanilla_cfg, "--out", "out_van"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Compare the three ledgers.
    let out = sm2(
        &[
            "compare",
            "--alpha1",
            "out_a1/ledger.jsonl",
            "--sm2",
            "out_sm2/ledger.jsonl",
            "--vanilla",
            "out_van/ledger.jsonl",
            "--out",
            "cmp",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("parity"), "{stdout}");
    assert!(dir.path().join("cmp/comparison.csv").exists());
}

#[test]
fn compare_rejects_mismatched_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = write_config(dir.path(), "a.toml", SMALL_RUN);
    let cfg_b = write_config(
        dir.path(),
        "b.toml",
        &SMALL_RUN.replace("seed = 7", "seed = 8"),
    );
    for (cfg, out_dir) in [(&cfg_a, "out_a"), (&cfg_b, "out_b")] {
        let out = sm2(&["run", "--config", cfg, "--out", out_dir], dir.path());
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = sm2(
        &[
            "compare",
            "--alpha1",
            "out_a/ledger.jsonl",
            "--sm2",
            "out_b/ledger.jsonl",
            "--vanilla",
            "out_a/ledger.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fingerprint"), "{stderr}");
}

#[test]
fn seed_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = sm2(
        &["run", "--config", &cfg, "--out", "out", "--seed", "99"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/ledger.jsonl")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("\"seed\":99"), "{header}");
}

#[test]
fn missing_output_dir_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = sm2(&["run", "--config", &cfg], dir.path());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn stock_run_finds_one_final_config() {
    // Full run at the stock defaults (eight candidates, twenty rates,
    // 5/10 thorough epochs). Slow but end to end.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "default.toml", "[run]\nseed = 42\n");
    let out = sm2(&["run", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/ledger.jsonl")).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.contains("\"final_selection\"")).count(),
        1
    );
    // Three halvings take eight candidates down to one.
    assert_eq!(text.lines().filter(|l| l.contains("\"halving\"")).count(), 3);
}

#[test]
fn shipped_sample_configs_validate() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    for name in [
        "configs/two_gaussians.toml",
        "configs/vanilla_baseline.toml",
        "configs/quadratic_bowl.toml",
    ] {
        let cfg = root.join(name);
        let out = sm2(&["validate", "--config", cfg.to_str().unwrap()], &root);
        assert_eq!(
            exit_code(&out),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn power_model_override_changes_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let overlay = write_config(
        dir.path(),
        "pm.toml",
        "p_idle_w = 120.0\np_max_w = 600.0\nnoise_rel = 0.0\n",
    );
    let out = sm2(
        &["run", "--config", &cfg, "--out", "out_hot", "--power-model", &overlay],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = sm2(&["run", "--config", &cfg, "--out", "out_base"], dir.path());
    assert_eq!(exit_code(&out), 0);
    let total = |p: &str| -> f64 {
        let text = std::fs::read_to_string(dir.path().join(p)).unwrap();
        let line = text
            .lines()
            .find(|l| l.contains("total energy"))
            .unwrap()
            .to_string();
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    let hot = total("out_hot/run_summary.txt");
    let base = total("out_base/run_summary.txt");
    assert!(hot > base * 1.5, "doubled power draw shows up: {hot} vs {base}");
}
