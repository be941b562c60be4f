use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fovpred::eval::parse_report_csv;
use fovpred::grid::read_grid;

const BIN: &str = env!("CARGO_BIN_EXE_fovpred");

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn fovpred(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(tiny_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FOVPRED_DATASET_ROOT")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = fovpred(out, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_of(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path and bytes of every file under `root`, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_writes_report_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let table = ok(a.path(), &["run"]);
    ok(b.path(), &["run"]);

    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 6, "{table}");
    assert!(
        lines[0].contains("unet_ff") && lines[0].contains("resnet_ff") && lines[0].contains("gan")
    );
    assert!(lines[1..].iter().all(|l| l.split_whitespace().count() == 4));

    let csv = fs::read_to_string(a.path().join("reports/ssim.csv")).unwrap();
    let rows = parse_report_csv(&csv).unwrap();
    assert_eq!(rows.len(), 15);
    assert!(rows
        .iter()
        .all(|r| r.n > 0 && (-1.0..=1.0).contains(&r.mean_ssim)));

    for dir in ["data", "reports", "maps", "checkpoints"] {
        assert_eq!(
            tree(&a.path().join(dir)),
            tree(&b.path().join(dir)),
            "{dir} differs between runs"
        );
    }

    let before = tree(&a.path().join("data"));
    ok(a.path(), &["dataset"]);
    assert_eq!(tree(&a.path().join("data")), before);

    // predict on a stored input crop
    let input = a.path().join("data/input/0002_00010.pgm");
    let output = a.path().join("pred.pgm");
    ok(
        a.path(),
        &[
            "predict",
            "--checkpoint",
            a.path()
                .join("checkpoints/unet_ff_130.ckpt")
                .to_str()
                .unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ],
    );
    let pred = read_grid(&output).unwrap();
    assert_eq!((pred.width(), pred.height()), (130, 130));

    let single = ok(
        a.path(),
        &["eval", "--arch", "resnet_ff", "--expansion", "1.5"],
    );
    let row = single.lines().find(|l| l.starts_with("1.50x")).unwrap();
    assert_eq!(row.split_whitespace().filter(|c| *c == "-").count(), 2);
}

#[test]
fn simulate_writes_log_and_estimate() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["genmap"]);
    ok(d.path(), &["simulate", "--episode", "1"]);
    let log = fs::read_to_string(d.path().join("episodes/episode_001.csv")).unwrap();
    assert_eq!(
        log.lines().next(),
        Some("step,x,y,theta,timestamp,v,theta_dot")
    );
    assert!(log.lines().count() > 10);
    let est = read_grid(&d.path().join("episodes/episode_001_estimate.pgm")).unwrap();
    let gt = read_grid(&d.path().join("maps/map_001.pgm")).unwrap();
    assert!(est.same_geometry(&gt));
    assert!(est.known_count() > 0);
}

#[test]
fn dataset_root_env_override() {
    let d = tempfile::tempdir().unwrap();
    let elsewhere = d.path().join("elsewhere");
    ok(d.path(), &["genmap"]);
    let o = Command::new(BIN)
        .arg("--config")
        .arg(tiny_config())
        .arg("--out")
        .arg(d.path())
        .arg("dataset")
        .env("FOVPRED_DATASET_ROOT", &elsewhere)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr_of(&o));
    assert!(elsewhere.join("manifest").exists());
    assert!(!d.path().join("data").exists());
}

#[test]
fn errors_name_the_stage() {
    let d = tempfile::tempdir().unwrap();

    let o = fovpred(d.path(), &["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr_of(&o).contains("Usage"));

    let o = fovpred(d.path(), &["dataset"]);
    assert!(!o.status.success());
    assert!(
        stderr_of(&o).starts_with("error: dataset:"),
        "{}",
        stderr_of(&o)
    );

    let o = fovpred(d.path(), &["eval"]);
    assert!(
        stderr_of(&o).starts_with("error: eval:"),
        "{}",
        stderr_of(&o)
    );

    let o = fovpred(d.path(), &["train", "--arch", "mlp"]);
    assert!(!o.status.success());

    let bad = d.path().join("bad.toml");
    fs::write(&bad, "schema = 9\n").unwrap();
    let o = Command::new(BIN)
        .arg("--config")
        .arg(&bad)
        .arg("genmap")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(
        stderr_of(&o).starts_with("error: config:"),
        "{}",
        stderr_of(&o)
    );
}
