//! End-to-end subcommand behavior through the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepifsac"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn deepifsac")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out_dir in ["a", "b"] {
        let out = run(
            &[
                "simulate",
                "--data",
                "synthetic:80x6@3",
                "--kind",
                "mar",
                "--rate",
                "0.3",
                "--seed",
                "9",
                "--out-dir",
                out_dir,
            ],
            dir.path(),
        );
        assert_ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("realized rate"));
    }
    let mask_a = fs::read(dir.path().join("a/mask.csv")).unwrap();
    let mask_b = fs::read(dir.path().join("b/mask.csv")).unwrap();
    assert_eq!(mask_a, mask_b);
    let masked_a = fs::read(dir.path().join("a/masked.csv")).unwrap();
    let masked_b = fs::read(dir.path().join("b/masked.csv")).unwrap();
    assert_eq!(masked_a, masked_b);

    // A different seed moves the mask.
    let out = run(
        &[
            "simulate", "--data", "synthetic:80x6@3", "--kind", "mar", "--rate", "0.3",
            "--seed", "10", "--out-dir", "c",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert_ne!(mask_a, fs::read(dir.path().join("c/mask.csv")).unwrap());
}

#[test]
fn train_then_impute_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "simulate", "--data", "synthetic:70x5@1", "--kind", "mcar", "--rate", "0.3",
            "--seed", "2", "--out-dir", "sim",
        ],
        dir.path(),
    ));
    assert_ok(&run(
        &[
            "train", "--data", "sim/masked.csv", "--epochs", "2", "--embed-dim", "8",
            "--heads", "2", "--blocks", "1", "--seed", "5",
            "--checkpoint", "ck/model.ckpt",
        ],
        dir.path(),
    ));
    assert!(dir.path().join("ck/model.ckpt").exists());
    let history = fs::read_to_string(dir.path().join("ck/model.losses.csv")).unwrap();
    assert!(history.starts_with("epoch,reconstruction,contrastive,total"));
    assert_eq!(history.lines().count(), 3);

    assert_ok(&run(
        &[
            "impute", "--checkpoint", "ck/model.ckpt", "--data", "sim/masked.csv",
            "--out", "imputed.csv",
        ],
        dir.path(),
    ));
    let imputed = fs::read_to_string(dir.path().join("imputed.csv")).unwrap();
    assert!(!imputed.contains("NA"), "imputed file still has missing cells");
}

#[test]
fn impute_with_no_missing_cells_reproduces_the_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &["synth", "--rows", "50", "--cols", "5", "--seed", "4", "--out", "full.csv"],
        dir.path(),
    ));
    assert_ok(&run(
        &[
            "simulate", "--data", "full.csv", "--kind", "mcar", "--rate", "0.3",
            "--seed", "2", "--out-dir", "sim",
        ],
        dir.path(),
    ));
    assert_ok(&run(
        &[
            "train", "--data", "sim/masked.csv", "--epochs", "2", "--embed-dim", "8",
            "--heads", "2", "--blocks", "1", "--checkpoint", "ck/m.ckpt",
        ],
        dir.path(),
    ));
    assert_ok(&run(
        &["impute", "--checkpoint", "ck/m.ckpt", "--data", "full.csv", "--out", "out.csv"],
        dir.path(),
    ));
    let original = fs::read_to_string(dir.path().join("full.csv")).unwrap();
    let out = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let parse = |s: &str| -> Vec<f64> {
        s.lines()
            .skip(1)
            .flat_map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(parse(&original), parse(&out));
}

#[test]
fn bench_accepts_config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        r#"
seed = 3
methods = ["median", "knn"]
kinds = ["mcar", "mnar"]
rates = [0.2]

[[datasets]]
source = "synthetic:60x5@2"
id = "synth-small"

[model]
epochs = 2
embed_dim = 8
heads = 2
blocks = 1
"#,
    )
    .unwrap();
    let out = run(
        &["bench", "--config", "exp.toml", "--kinds", "mcar", "--out-dir", "out"],
        dir.path(),
    );
    assert_ok(&out);
    let reports = fs::read_to_string(dir.path().join("out/reports.csv")).unwrap();
    // flag overrode the file's two kinds down to one
    assert!(reports.contains("mcar") && !reports.contains("mnar"));
    assert!(reports.contains("synth-small"));
    assert!(dir.path().join("out/rank_table.txt").exists());
    assert!(dir.path().join("out/summary.json").exists());
    assert!(dir.path().join("out/manifest.json").exists());
    assert!(dir.path().join("out/aux/timings.csv").exists());

    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("config_hash"));
}

#[test]
fn bench_rejects_unknown_config_keys_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "seed = 1\nmystery_knob = true\n\n[[datasets]]\nsource = \"synthetic:60x5\"\n",
    )
    .unwrap();
    let out = run(&["bench", "--config", "bad.toml"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mystery_knob") || stderr.contains("unknown"), "{stderr}");
}

#[test]
fn bench_rejects_invalid_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["bench", "--data", "synthetic:60x5", "--methods", "median", "--rates", "1.5"],
        dir.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn verify_subcommand_passes_and_prints_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify"], dir.path());
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 15);
    assert!(!stdout.contains("FAIL"));
}
