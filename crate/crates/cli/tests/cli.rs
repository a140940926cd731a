use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
seed = 11
epochs = 3
hidden = 16, 8
latent_dim = 4
latent_dims = 2, 4
n_controls = 200
n_holdout = 20
n_per_stage = 20, 20, 20
";

fn run(config: &Path, cmd: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normkit"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("spawn normkit")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(text: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn trained(text: &str) -> (TempDir, PathBuf) {
    let (dir, cfg) = workspace(text);
    ok(&run(&cfg, "generate", &[]));
    ok(&run(&cfg, "train", &[]));
    (dir, cfg)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn unknown_config_key_exits_2() {
    let (dir, cfg) = workspace("seed = 1\ncolour = red\n");
    let out = run(&cfg, "generate", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert!(!dir.path().join("cohort.csv").exists());
}

#[test]
fn missing_cohort_exits_3_without_outputs() {
    let (dir, cfg) = workspace(SMALL);
    let out = run(&cfg, "train", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("model.ckpt").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn too_few_controls_is_a_data_error() {
    let (dir, cfg) = workspace(&SMALL.replace("n_controls = 200", "n_controls = 40"));
    ok(&run(&cfg, "generate", &[]));
    ok(&run(&cfg, "train", &[]));
    let out = run(&cfg, "evaluate", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out/deviations.csv").exists());
    assert!(!dir.path().join("out/manifest_evaluate.txt").exists());
}

#[test]
fn checkpoint_mismatch_exits_2() {
    let (dir, cfg) = trained(SMALL);
    let out = run(&cfg, "evaluate", &["--latent-dim", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent_dim"));
    let out = run(&cfg, "evaluate", &["--strategy", "poe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/deviations.csv").exists());
}

#[test]
fn pipeline_writes_tables_and_manifests() {
    let (dir, cfg) = trained(SMALL);
    ok(&run(&cfg, "evaluate", &[]));
    ok(&run(&cfg, "interpret", &[]));
    let out = dir.path().join("out");

    let dev = read(&out, "deviations.csv");
    assert_eq!(dev.lines().count(), 1 + 200 + 20 + 60);
    let outliers = read(&out, "outliers.csv");
    assert!(outliers.starts_with("metric,disease_rate,holdout_rate,likelihood_ratio,corrected\n"));
    assert_eq!(outliers.lines().count(), 3);
    assert!(read(&out, "group_summary.csv").starts_with("stage,n,metric,"));
    assert!(read(&out, "group_contrasts.csv").starts_with("stage_a,stage_b,p_D_ml,p_D_mf"));
    assert!(read(&out, "regression.csv").contains("subject_id,y,x"));
    let trace = read(&out, "loss_trace.csv");
    assert!(trace.starts_with("epoch,total,recon_mri,recon_amyloid,kl\n"));
    assert_eq!(trace.lines().count(), 1 + 3);
    let dims = read(&out, "selected_dims.csv");
    assert_eq!(dims.lines().count(), 1 + 4);

    let manifest = read(&out, "manifest_evaluate.txt");
    assert!(manifest.starts_with("normkit-manifest 1\ncommand=evaluate\nseed=11\n"));
    assert!(manifest.contains("input.cohort.sha256="));
    assert!(manifest.contains("input.model.sha256="));
    assert!(manifest.contains("output.deviations.csv.sha256="));
    assert!(manifest.contains("config.latent_dim=4"));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, ca) = trained(SMALL);
    let (b, cb) = trained(SMALL);
    ok(&run(&ca, "evaluate", &[]));
    ok(&run(&cb, "evaluate", &[]));
    for name in ["cohort.csv", "model.ckpt", "out/manifest_train.txt", "out/manifest_evaluate.txt", "out/deviations.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn manifest_follows_config_values_not_layout() {
    let (dir, cfg) = workspace(SMALL);
    ok(&run(&cfg, "generate", &[]));
    let first = read(dir.path(), "out/manifest_generate.txt");

    fs::write(&cfg, format!("# same values\n{SMALL}\n\n")).unwrap();
    ok(&run(&cfg, "generate", &[]));
    assert_eq!(read(dir.path(), "out/manifest_generate.txt"), first);

    ok(&run(&cfg, "generate", &["--seed", "12"]));
    let reseeded = read(dir.path(), "out/manifest_generate.txt");
    assert_ne!(reseeded, first);
    assert!(reseeded.contains("seed=12"));
}

#[test]
fn alpha_one_flags_everyone() {
    let (dir, cfg) = trained(&format!("{SMALL}alpha = 1.0\n"));
    ok(&run(&cfg, "evaluate", &[]));
    let outliers = read(&dir.path().join("out"), "outliers.csv");
    for line in outliers.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let lr: f64 = f[3].parse().unwrap();
        assert!((lr - 1.0).abs() < 1e-12, "{line}");
        assert_eq!(f[4], "0");
    }
}

#[test]
fn compare_fills_the_grid() {
    let (dir, cfg) = workspace(SMALL);
    ok(&run(&cfg, "generate", &[]));
    ok(&run(&cfg, "compare", &[]));
    let out = dir.path().join("out");
    let wide = read(&out, "likelihood_ratios.csv");
    let mut lines = wide.lines();
    assert_eq!(lines.next(), Some("model,feature_space,D_ml_d2,D_mf_d2,D_ml_d4,D_mf_d4"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let models: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(models, ["mopoe", "poe", "moe", "gpoe", "mri-only", "amyloid-only", "concat"]);
    for r in &rows {
        assert_eq!(r.len(), 6);
        let space = if r[0].ends_with("-only") { "single-modality" } else { "joint" };
        assert_eq!(r[1], space);
        assert!(r[2..].iter().all(|v| v.parse::<f64>().unwrap() >= 0.0));
    }
    assert_eq!(read(&out, "likelihood_ratios_long.csv").lines().count(), 1 + 7 * 2 * 2);
    assert!(out.join("manifest_compare.txt").exists());
}
