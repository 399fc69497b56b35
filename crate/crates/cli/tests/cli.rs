use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ovb_core::{read_checkpoint, DatasetManifest, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;
use tempfile::TempDir;

fn ovb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovb"))
        .args(args)
        .env_remove("OVB_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ovb(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Locations of the `k` highest density peaks per coordinate, sorted.
fn peaks(summary: &Value, k: usize) -> Vec<Vec<f64>> {
    summary["marginals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            let mut xs: Vec<f64> = m["peaks"]
                .as_array()
                .unwrap()
                .iter()
                .take(k)
                .map(|p| p[0].as_f64().unwrap())
                .collect();
            xs.sort_by(f64::total_cmp);
            xs
        })
        .collect()
}

fn small_regression_set(tmp: &TempDir) -> PathBuf {
    let data = tmp.path().join("data");
    ok(&[
        "simulate",
        "--example",
        "3",
        "--K",
        "4",
        "--n",
        "10",
        "--T",
        "2",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    data
}

/// Ten subjects in two tight, well separated groups, written as delimited
/// text: y = x·β_i + noise with g = 2 and 10 sites at 2 time points.
fn write_toy_csv(dir: &Path) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    (0..10)
        .map(|i| {
            let centre = if i % 2 == 0 { [2.0, -1.0] } else { [-2.0, 1.0] };
            let beta = centre.map(|c| c + 0.05 * normal());
            let mut text = String::from("t,k,y,x1,x2\n");
            for t in 0..2 {
                for k in 0..10 {
                    let x = [normal(), normal()];
                    let y = x[0] * beta[0] + x[1] * beta[1] + 0.1 * normal();
                    text.push_str(&format!("{t},{k},{y},{},{}\n", x[0], x[1]));
                }
            }
            let path = dir.join(format!("s{i}.csv"));
            fs::write(&path, text).unwrap();
            path
        })
        .collect()
}

#[test]
fn simulate_writes_one_record_per_subject() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ex1");
    ok(&[
        "simulate",
        "--example",
        "1",
        "--n",
        "500",
        "--T",
        "50",
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    let records = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "ovb")
        })
        .count();
    assert_eq!(records, 500);
    let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.subjects.len(), 500);
    assert_eq!((manifest.sites, manifest.times), (1, 50));
    assert!(out.join("truth.json").exists());
    assert_eq!(json(out.join("run.json"))["status"], "ok");
}

#[test]
fn simulate_infers_square_grid() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ex2");
    ok(&[
        "simulate",
        "--example",
        "2",
        "--K",
        "400",
        "--n",
        "100",
        "--T",
        "5",
        "--out",
        s(&out),
    ]);
    let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(
        manifest.grid,
        Some(GridSpec::Lattice { rows: 20, cols: 20 })
    );
    assert_eq!(manifest.subjects.len(), 100);
}

#[test]
fn invalid_example_is_a_usage_error() {
    let out = ovb(&["simulate", "--example", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--example"));
}

#[test]
fn non_square_lattice_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bad");
    let res = ovb(&[
        "simulate",
        "--example",
        "2",
        "--K",
        "10",
        "--n",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let run = json(out.join("run.json"));
    assert_eq!(run["status"], "failed");
    assert!(run["error"].as_str().unwrap().contains("perfect square"));
}

#[test]
fn simulation_is_deterministic_given_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "simulate",
            "--example",
            "3",
            "--K",
            "9",
            "--n",
            "4",
            "--T",
            "3",
            "--seed",
            "11",
            "--out",
            s(d),
        ]);
    }
    for name in [
        "subject_000000.ovb",
        "subject_000003.ovb",
        "truth.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn single_component_checkpoint_predicts_one_normal() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let fit = tmp.path().join("fit");
    ok(&[
        "fit",
        "--mode",
        "batch",
        "--data",
        s(&data),
        "--R",
        "1",
        "--out",
        s(&fit),
    ]);
    let pred = tmp.path().join("pred");
    let ckpt = fit.join("checkpoint.ckpt");
    ok(&["predict", "--checkpoint", s(&ckpt), "--out", s(&pred)]);

    let global = read_checkpoint(&ckpt).unwrap().global;
    let text = fs::read_to_string(pred.join("density.tsv")).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next().unwrap(), "x\tbeta1\tbeta2");
    let mut count = 0;
    for row in rows {
        let v: Vec<f64> = row.split('\t').map(|c| c.parse().unwrap()).collect();
        for j in 0..2 {
            let (m, var) = (global.beta_mean[0][j], global.beta_cov[0][(j, j)]);
            let want = (-(v[0] - m).powi(2) / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt();
            assert!(
                (v[1 + j] - want).abs() <= 1e-8 * want,
                "{} vs {want}",
                v[1 + j]
            );
        }
        count += 1;
    }
    assert_eq!(count, 401);
    let summary = json(pred.join("modes.json"));
    assert_eq!(summary["weights"].as_array().unwrap().len(), 1);
    assert_eq!(summary["effective_components"], 1);
}

#[test]
fn default_grid_spans_component_means_six_sd() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let fit = tmp.path().join("fit");
    ok(&[
        "fit",
        "--mode",
        "online",
        "--data",
        s(&data),
        "--R",
        "3",
        "--out",
        s(&fit),
    ]);
    let global = read_checkpoint(fit.join("checkpoint.ckpt")).unwrap().global;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, c) in global.beta_mean.iter().zip(&global.beta_cov) {
        for j in 0..m.len() {
            lo = lo.min(m[j] - 6.0 * c[(j, j)].sqrt());
            hi = hi.max(m[j] + 6.0 * c[(j, j)].sqrt());
        }
    }
    let text = fs::read_to_string(fit.join("density.tsv")).unwrap();
    let xs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    assert!((xs[0] - lo).abs() < 1e-9 && (xs[xs.len() - 1] - hi).abs() < 1e-9);
}

#[test]
fn batch_and_online_agree_on_a_toy() {
    let tmp = TempDir::new().unwrap();
    let csv = write_toy_csv(tmp.path());
    let data = tmp.path().join("data");
    let mut args = vec!["convert", "--out", s(&data), "--input"];
    args.extend(csv.iter().map(|p| s(p)));
    ok(&args);
    let mut found = Vec::new();
    for mode in ["batch", "online"] {
        let out = tmp.path().join(mode);
        ok(&[
            "fit",
            "--mode",
            mode,
            "--data",
            s(&data),
            "--variant",
            "regression-only",
            "--R",
            "5",
            "--density-grid",
            "-4:4:4001",
            "--out",
            s(&out),
        ]);
        found.push(peaks(&json(out.join("summary.json")), 2));
    }
    for (a, b) in found[0].iter().zip(&found[1]) {
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 0.1, "batch {a:?} online {b:?}");
        }
    }
}

#[test]
fn resumed_stream_matches_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let csv = write_toy_csv(tmp.path());
    let convert = |files: &[PathBuf], out: &Path| {
        let mut args = vec!["convert", "--out", s(out), "--input"];
        args.extend(files.iter().map(|p| s(p)));
        ok(&args);
    };
    let (head, full) = (tmp.path().join("head"), tmp.path().join("full"));
    convert(&csv[..5], &head);
    convert(&csv, &full);
    let fit = |data: &Path, out: &Path, resume: Option<&Path>| {
        let mut args = vec![
            "fit",
            "--mode",
            "online",
            "--data",
            s(data),
            "--variant",
            "regression-only",
            "--R",
            "4",
            "--out",
            s(out),
        ];
        if let Some(r) = resume {
            args.extend(["--resume", s(r)]);
        }
        ok(&args);
        read_checkpoint(out.join("checkpoint.ckpt")).unwrap()
    };
    let first = tmp.path().join("first");
    let partial = fit(&head, &first, None);
    assert_eq!(partial.processed, 5);
    let resumed = fit(
        &full,
        &tmp.path().join("resumed"),
        Some(&first.join("checkpoint.ckpt")),
    );
    let straight = fit(&full, &tmp.path().join("straight"), None);
    assert_eq!(resumed.processed, 10);
    let bits = |c: &ovb_core::Checkpoint| {
        c.global
            .flatten()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&resumed), bits(&straight));
}

#[test]
fn reduced_random_walk_design_finds_two_components() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "simulate",
        "--example",
        "1",
        "--n",
        "200",
        "--T",
        "50",
        "--seed",
        "7",
        "--out",
        s(&data),
    ]);
    let out = tmp.path().join("recip");
    ok(&[
        "fit",
        "--mode",
        "online",
        "--discount",
        "reciprocal",
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["effective_components"], 2);
    assert_eq!(summary["components"].as_array().unwrap().len(), 20);
    for c in summary["components"].as_array().unwrap().iter().take(2) {
        assert!(c["theta"]["lower"].as_f64().unwrap() < c["theta"]["upper"].as_f64().unwrap());
    }

    let plain = tmp.path().join("plain");
    let res = ovb(&[
        "fit",
        "--mode",
        "online",
        "--discount",
        "none",
        "--data",
        s(&data),
        "--out",
        s(&plain),
    ]);
    assert!(matches!(res.status.code(), Some(0 | 5)));
    let summary = json(plain.join("summary.json"));
    assert_eq!(summary["schedule"]["kind"], "none");
    assert!(plain.join("density.tsv").exists() && plain.join("checkpoint.ckpt").exists());
}

#[test]
fn shuffled_order_changes_the_online_fit_only() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let fit = |mode: &str, extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec![
            "fit",
            "--mode",
            mode,
            "--data",
            s(&data),
            "--R",
            "3",
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        read_checkpoint(out.join("checkpoint.ckpt"))
            .unwrap()
            .global
            .flatten()
    };
    assert_ne!(
        fit("online", &[], "o1"),
        fit("online", &["--shuffle-subjects", "1"], "o2")
    );
    assert_eq!(
        fit("online", &["--shuffle-subjects", "1"], "o3"),
        fit("online", &["--shuffle-subjects", "1"], "o4")
    );
    let (b1, b2) = (
        fit("batch", &[], "b1"),
        fit("batch", &["--shuffle-subjects", "1"], "b2"),
    );
    let gap = b1
        .iter()
        .zip(&b2)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(gap < 1e-6, "batch fit moved by {gap}");
}

#[test]
fn gibbs_fit_writes_draws_and_summary() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let out = tmp.path().join("mcmc");
    ok(&[
        "fit",
        "--mode",
        "mcmc",
        "--data",
        s(&data),
        "--R",
        "4",
        "--iterations",
        "300",
        "--burn-in",
        "100",
        "--thin",
        "2",
        "--out",
        s(&out),
    ]);
    let draws = fs::read_to_string(out.join("draws.tsv")).unwrap();
    assert_eq!(draws.lines().count(), 101);
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["draws"], 100);
    let noise = &summary["noise_variance"];
    assert!(noise["lower"].as_f64().unwrap() <= noise["upper"].as_f64().unwrap());
}

#[test]
fn sampler_over_budget_is_refused() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let out = tmp.path().join("mcmc");
    let res = ovb(&[
        "fit",
        "--mode",
        "mcmc",
        "--data",
        s(&data),
        "--budget",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(4));
    let run = json(out.join("run.json"));
    assert_eq!(run["exit_code"], 4);
    assert!(!out.join("draws.tsv").exists());
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nothing");
    let res = ovb(&[
        "fit",
        "--mode",
        "batch",
        "--data",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn corrupted_checkpoint_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let data = small_regression_set(&tmp);
    let fit = tmp.path().join("fit");
    ok(&[
        "fit",
        "--mode",
        "batch",
        "--data",
        s(&data),
        "--R",
        "2",
        "--out",
        s(&fit),
    ]);
    let ckpt = fit.join("checkpoint.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 2;
    bytes[last] ^= 1;
    fs::write(&ckpt, bytes).unwrap();
    let res = ovb(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&tmp.path().join("p")),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn output_directory_defaults_to_environment() {
    let tmp = TempDir::new().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_ovb"))
        .args(["export-car", "--grid", "4x4"])
        .env("OVB_OUTPUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let runs: Vec<PathBuf> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert_eq!(String::from_utf8_lossy(&res.stdout).trim(), s(run));
    let manifest = json(run.join("run.json"));
    assert_eq!(manifest["command"], "export-car");
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for name in &listed {
        assert!(run.join(name).exists(), "{name}");
    }
    let grid = fs::read_to_string(run.join("rho_grid.tsv")).unwrap();
    assert_eq!(grid.lines().count(), 12);
}

#[test]
fn reduced_spatial_design_predicts_bimodal_marginals() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "simulate",
        "--example",
        "2",
        "--K",
        "25",
        "--n",
        "60",
        "--T",
        "3",
        "--seed",
        "7",
        "--out",
        s(&data),
    ]);
    let fit = tmp.path().join("fit");
    ok(&[
        "fit",
        "--mode",
        "online",
        "--data",
        s(&data),
        "--out",
        s(&fit),
    ]);
    let pred = tmp.path().join("pred");
    ok(&[
        "predict",
        "--checkpoint",
        s(&fit.join("checkpoint.ckpt")),
        "--modes",
        "2",
        "--out",
        s(&pred),
    ]);
    let summary = json(pred.join("modes.json"));
    for m in summary["marginals"].as_array().unwrap() {
        let modes: Vec<f64> = m["modes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(modes.len(), 2, "{modes:?}");
        assert!(
            modes[0] < 0.0 && modes[1] > 0.0 && modes[1] - modes[0] > 1.0,
            "{modes:?}"
        );
    }
}
