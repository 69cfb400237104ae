//! End-to-end tests of the `lotdepth` binary: every command is run as a
//! subprocess against seeded synthetic data in a temp directory. The core
//! contract under test is determinism (re-runs are byte-identical) plus the
//! documented shapes of the emitted files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lotdepth"))
}

/// Run the binary, panicking with full output if the exit status is bad.
fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawning lotdepth");
    assert!(
        out.status.success(),
        "lotdepth {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_expecting_failure(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawning lotdepth");
    assert!(!out.status.success(), "lotdepth {args:?} unexpectedly succeeded");
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_blobs(dir: &Path, count: usize, seed: u64, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--kind",
        "blobs",
        "--count",
    ];
    let count_s = count.to_string();
    let seed_s = seed.to_string();
    args.push(&count_s);
    args.extend_from_slice(&["--height", "8", "--width", "8", "--seed", &seed_s]);
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", path_str(dir)]);
    run(&args);
}

#[test]
fn synth_is_deterministic_and_labels_the_outlier_tail() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_blobs(&a, 20, 9, &["--outlier-fraction", "0.2"]);
    synth_blobs(&b, 20, 9, &["--outlier-fraction", "0.2"]);
    assert_eq!(
        fs::read(a.join("images.idx")).unwrap(),
        fs::read(b.join("images.idx")).unwrap()
    );
    let labels = fs::read_to_string(a.join("labels.txt")).unwrap();
    let flags: Vec<&str> = labels.lines().collect();
    assert_eq!(flags.len(), 20);
    assert!(flags[..16].iter().all(|&f| f == "0"));
    assert!(flags[16..].iter().all(|&f| f == "1"));
    // The run configuration is recorded alongside the data.
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["outlier_fraction"], 0.2);
}

#[test]
fn embed_and_depth_rerun_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_blobs(&data, 40, 5, &[]);
    let images = data.join("images.idx");
    let m1 = tmp.path().join("m1.json");
    let m2 = tmp.path().join("m2.json");
    for m in [&m1, &m2] {
        run(&[
            "embed", "--input", path_str(&images), "--dim", "2", "--seed", "5", "--out",
            path_str(m),
        ]);
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());

    let d1 = tmp.path().join("d1.csv");
    let d2 = tmp.path().join("d2.csv");
    for d in [&d1, &d2] {
        run(&[
            "depth", "--model", path_str(&m1), "--input", path_str(&images), "--out",
            path_str(d),
        ]);
    }
    let csv = fs::read_to_string(&d1).unwrap();
    assert_eq!(csv, fs::read_to_string(&d2).unwrap());
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "id,inner,outer,residual,latent_0,latent_1,rank_0,rank_1"
    );
    assert_eq!(lines.count(), 40);

    // The JSON format carries the same records.
    let dj = tmp.path().join("d.json");
    run(&[
        "depth", "--model", path_str(&m1), "--input", path_str(&images), "--format", "json",
        "--out", path_str(&dj),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&dj).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 40);
}

#[test]
fn summary_lands_on_the_five_documented_positions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_blobs(&data, 100, 17, &[]);
    let images = data.join("images.idx");
    let model = tmp.path().join("model.json");
    run(&[
        "embed", "--input", path_str(&images), "--dim", "2", "--seed", "17", "--out",
        path_str(&model),
    ]);
    let out = tmp.path().join("summary");
    run(&[
        "summary", "--model", path_str(&model), "--input", path_str(&images), "--out",
        path_str(&out),
    ]);
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let positions: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(positions, ["1", "25", "50", "75", "100"]);
    for pos in [1, 25, 50, 75, 100] {
        assert!(out.join(format!("summary_p{pos:04}.pgm")).is_file());
    }
    // Depths are nonincreasing down the table (deepest first).
    let inners: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(inners.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn identical_samples_never_reject() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_blobs(&data, 30, 3, &[]);
    let images = data.join("images.idx");
    let out = tmp.path().join("test");
    run(&[
        "test", "--input-a", path_str(&images), "--input-b", path_str(&images), "--dim", "2",
        "--seed", "3", "--out", path_str(&out),
    ]);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("test_result.json")).unwrap()).unwrap();
    assert!(result["statistic"].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(result["reject"], false);
    assert_eq!(result["dof"], 2);
}

#[test]
fn shifted_samples_reject_and_rates_separate() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_blobs(&a, 40, 21, &[]);
    synth_blobs(&b, 40, 22, &["--shift-x", "1.5"]);
    let out = tmp.path().join("test");
    run(&[
        "test",
        "--input-a",
        path_str(&a.join("images.idx")),
        "--input-b",
        path_str(&b.join("images.idx")),
        "--dim",
        "2",
        "--seed",
        "1",
        "--reps",
        "4",
        "--out",
        path_str(&out),
    ]);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("test_result.json")).unwrap()).unwrap();
    assert_eq!(result["reject"], true);
    let table = fs::read_to_string(out.join("rejection_rates.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "pair,m,n,d,alpha,rate");
    let null_rate: f64 = lines.next().unwrap().split(',').last().unwrap().parse().unwrap();
    let alt_rate: f64 = lines.next().unwrap().split(',').last().unwrap().parse().unwrap();
    assert!(null_rate <= alt_rate, "null {null_rate} vs alternative {alt_rate}");
    assert!(alt_rate >= 0.75, "shifted pair should mostly reject, got {alt_rate}");
}

#[test]
fn quantile_requires_a_two_dimensional_latent_space() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_blobs(&data, 30, 12, &[]);
    let model = tmp.path().join("model.json");
    run(&[
        "embed", "--input", path_str(&data.join("images.idx")), "--dim", "3", "--seed", "12",
        "--out", path_str(&model),
    ]);
    let out = run_expecting_failure(&[
        "quantile", "--model", path_str(&model), "--out",
        path_str(&tmp.path().join("q")),
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2-dimensional"), "stderr: {err}");
}

#[test]
fn quantile_layout_covers_three_circles_plus_center() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_blobs(&data, 30, 12, &[]);
    let model = tmp.path().join("model.json");
    run(&[
        "embed", "--input", path_str(&data.join("images.idx")), "--dim", "2", "--seed", "12",
        "--out", path_str(&model),
    ]);
    let out = tmp.path().join("q");
    run(&[
        "quantile", "--model", path_str(&model), "--angles", "4", "--mode", "entropic", "--out",
        path_str(&out),
    ]);
    assert!(out.join("quantile_center.pgm").is_file());
    for r in ["025", "050", "075"] {
        for a in 0..4 {
            assert!(out.join(format!("quantile_r{r}_a{a:02}.pgm")).is_file());
        }
    }
    let csv = fs::read_to_string(out.join("quantile.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 12);
    // Requested directions have the stated radii.
    for line in csv.lines().skip(2) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (r, u0, u1) = (cols[0], cols[3], cols[4]);
        assert!((u0.hypot(u1) - r).abs() < 1e-12);
    }
}

#[test]
fn full_variance_is_explained_when_dim_matches_the_tangent_space() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = run(&[
        "synth", "--kind", "blobs", "--count", "20", "--height", "3", "--width", "3", "--seed",
        "2", "--out", path_str(&data),
    ]);
    drop(out);
    let model = tmp.path().join("model.json");
    // Tangent vectors of a 3x3 grid live in 18 coordinates.
    let out = run(&[
        "embed", "--input", path_str(&data.join("images.idx")), "--dim", "18", "--seed", "2",
        "--out", path_str(&model),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let total: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("total explained variance "))
        .and_then(|rest| rest.split(';').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 1.0).abs() < 1e-9, "total explained variance {total}");
}

#[test]
fn outlier_reads_text_flags_and_reports_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train");
    let cal = tmp.path().join("cal");
    let query = tmp.path().join("query");
    synth_blobs(&train, 30, 7, &[]);
    synth_blobs(&cal, 20, 8, &[]);
    synth_blobs(&query, 30, 9, &["--outlier-fraction", "0.2"]);
    let out = tmp.path().join("out");
    run(&[
        "outlier",
        "--train",
        path_str(&train.join("images.idx")),
        "--calibrate",
        path_str(&cal.join("images.idx")),
        "--input",
        path_str(&query.join("images.idx")),
        "--labels",
        path_str(&query.join("labels.txt")),
        "--dim",
        "2",
        "--alpha",
        "0.05",
        "--seed",
        "11",
        "--out",
        path_str(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("outlier_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["total"], 30);
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let verdicts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts.as_array().unwrap().len(), 30);
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));
    let dd = fs::read_to_string(out.join("dd_plot.csv")).unwrap();
    assert!(dd.contains(",outlier") && dd.contains(",inlier"));
}

#[test]
fn partial_epsilon_flags_are_rejected_by_the_parser() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_expecting_failure(&[
        "embed",
        "--input",
        "unused.idx",
        "--eps-start",
        "1.0",
        "--out",
        path_str(&tmp.path().join("m.json")),
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--eps-end") || err.contains("eps_end"), "stderr: {err}");
}
