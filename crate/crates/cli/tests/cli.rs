mod common;

use std::fs;
use std::process::Command as Process;

use common::*;
use eoli_cli::config::parse_config;
use eoli_cli::pipeline::{execute_with, Command, Stage, RUN_ARTIFACTS};
use serde_json::json;
use sha2::{Digest, Sha256};

fn quick_toy(dir: &std::path::Path) -> std::path::PathBuf {
    let cfg = toy(dir, 2);
    patch_config(&cfg, json!({ "imputer": quick_imputer(), "benchmark": quick_benchmark() }));
    cfg
}

#[test]
fn run_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_toy(tmp.path());
    let out = tmp.path().join("out");
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]), 0);
    let m = manifest(&out);
    assert_eq!(m["command"], "run");
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert_eq!(listed.len(), RUN_ARTIFACTS.len());
    for name in RUN_ARTIFACTS {
        assert_eq!(listed.iter().filter(|f| **f == name).count(), 1, "{name}");
    }
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert!(!bytes.contains(&b'\r'));
    }
    let stages: Vec<&str> = m["timings"].as_array().unwrap().iter().map(|t| t["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["ingest", "missingness", "impute", "reduce", "build_index", "rank", "categorize"]);
    assert_eq!(m["config_digest"].as_str().unwrap(), parse_config(&cfg).unwrap().digest());
}

#[test]
fn every_manifest_warning_reaches_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_toy(tmp.path());
    // A constant indicator forces a warning.
    let panel = tmp.path().join("panel.csv");
    let text: String = fs::read_to_string(&panel)
        .unwrap()
        .lines()
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            if parts[2] == "gdp_growth" && !parts[3].is_empty() {
                format!("{},{},{},1.000000\n", parts[0], parts[1], parts[2])
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    fs::write(&panel, text).unwrap();
    let output =
        Process::new(env!("CARGO_BIN_EXE_eoli")).args(["reduce", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    let m = manifest(&tmp.path().join("out"));
    let warnings = m["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("gdp_growth")));
    for w in warnings {
        assert!(stderr.contains(&format!("warning: {}", w.as_str().unwrap())));
    }
}

#[test]
fn subcommands_emit_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_toy(tmp.path());
    let fs_ext = tmp.path().join("external.csv");
    fs::write(&fs_ext, "country,rank\nUSA,1\nCAN,2\nAUS,3\nDEU,4\nGBR,5\nJPN,6\nMYS,7\nCHN,8\nIND,9\n").unwrap();
    patch_config(&cfg, json!({ "external_ranks": { "path": "external.csv", "year": 2020 } }));
    let cases: [(&str, &[&str]); 9] = [
        ("ingest", &["panel.csv"]),
        ("report-missingness", &["missingness_report.csv"]),
        ("impute", &["imputed.csv"]),
        ("benchmark", &["benchmark_report.csv", "kde.csv"]),
        ("reduce", &["pca_report.csv", "factor_report.csv", "kmo_report.csv"]),
        ("build-index", &["subindex.csv"]),
        ("rank", &["rankings.csv", "average_ranks.csv"]),
        ("categorize", &["categories.csv"]),
        ("compare", &["comparison.csv"]),
    ];
    for (cmd, files) in cases {
        let out = tmp.path().join(cmd);
        assert_eq!(
            run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--method", "mean"]),
            0,
            "{cmd}"
        );
        let mut present: Vec<String> = digests(&out).into_keys().collect();
        present.sort();
        let mut expected: Vec<String> = files.iter().map(|s| s.to_string()).collect();
        expected.sort();
        assert_eq!(present, expected, "{cmd}");
    }
    let headers = [
        ("ingest/panel.csv", "country,year,indicator,value"),
        ("benchmark/benchmark_report.csv", "method,attribute,rmse_mean,rmse_std,mae_mean,mae_std,n_runs"),
        ("benchmark/kde.csv", eoli_core::benchmark::KDE_HEADER),
        ("rank/average_ranks.csv", "country,eoli,economic,institutional,quality_of_life,sustainability"),
        ("compare/comparison.csv", "country,our_rank,external_rank,gap"),
    ];
    for (file, h) in headers {
        assert_eq!(header(&tmp.path().join(file)), h, "{file}");
    }
    let cmp = fs::read_to_string(tmp.path().join("compare/comparison.csv")).unwrap();
    assert!(cmp.lines().last().unwrap().starts_with("# spearman="));
    // Run without external ranks leaves comparison out; with them it is added.
    let out = tmp.path().join("full");
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--method", "mean"]), 0);
    assert!(out.join("comparison.csv").exists());
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_toy(tmp.path());
    let out = tmp.path().join("o");
    assert_eq!(
        run(&[
            "impute",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "77",
            "--out",
            out.to_str().unwrap(),
            "--method",
            "mean"
        ]),
        0
    );
    let m = manifest(&out);
    assert_eq!(m["seed"], 77);
    // Mean imputation ignores the seed entirely.
    let out2 = tmp.path().join("o2");
    assert_eq!(
        run(&[
            "impute",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "78",
            "--out",
            out2.to_str().unwrap(),
            "--method",
            "mean"
        ]),
        0
    );
    assert_eq!(digests(&out), digests(&out2));
    // Forest imputation does not.
    let (f1, f2) = (tmp.path().join("f1"), tmp.path().join("f2"));
    assert_eq!(run(&["impute", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", f1.to_str().unwrap()]), 0);
    assert_eq!(run(&["impute", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", f2.to_str().unwrap()]), 0);
    assert_ne!(digests(&f1), digests(&f2));
}

#[test]
fn unreadable_input_fails_in_ingest_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, r#"{ "data_sources": [{ "path": "missing.csv" }] }"#).unwrap();
    let config = parse_config(&cfg).unwrap();
    let err = execute_with(Command::Run, &config, false).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
    assert_eq!(err.file.as_deref(), Some(tmp.path().join("missing.csv").as_path()));
    assert!(!tmp.path().join("out").exists());
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]), 1);
}

#[test]
fn failure_after_partial_output_removes_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_toy(tmp.path());
    // Missingness and imputation succeed, reduction fails on the factor count.
    patch_config(&cfg, json!({ "n_factors": { "economic": 40 } }));
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep.txt"), "unrelated").unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--method", "mean"]), 1);
    let left: Vec<String> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().to_string()).collect();
    assert_eq!(left, ["keep.txt"]);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{ "data_sources": [{ "path": "x.csv" }], "wieghts": {} }"#).unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]), 2);
    fs::write(&cfg, r#"{ "data_sources": [{ "path": "x.csv" }], "weights": { "economic": 0.3, "institutional": 0.3, "quality_of_life": 0.3, "sustainability": 0.3 } }"#).unwrap();
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap()]), 2);
    assert_eq!(run(&["run"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["run", "--config", cfg.to_str().unwrap(), "--method", "knn"]), 2);
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = Process::new(env!("CARGO_BIN_EXE_eoli")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "ingest",
        "report-missingness",
        "impute",
        "benchmark",
        "reduce",
        "build-index",
        "rank",
        "categorize",
        "compare",
        "run",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let out = Process::new(env!("CARGO_BIN_EXE_eoli")).args(["run", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--seed", "--out", "--method", "mean", "mice", "forest"] {
        assert!(text.contains(flag), "{flag}");
    }
}
