mod common;

use std::process::Command;

use common::tiny_config;
use msb_cli::ingest::{codes_from_csv, ingest_codes, save_codes, CodeFormat};
use msb_cli::manifest::StageStatus;
use msb_cli::report::RunReport;
use msb_cli::{run_pipeline, Layout, RunManifest, Runner, Target};

fn msb() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msb"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let manifest = run_pipeline(&cfg).unwrap();
    assert!(!manifest.has_failures(), "{:?}", manifest.stages);
    let layout = Layout::new(dir.path());
    for k in [2, 4] {
        for rel in [
            Layout::model(k),
            Layout::train_log(k),
            Layout::metrics(k),
            Layout::fit(k),
            Layout::partition(k),
            Layout::discovery(k),
            Layout::capture(k),
        ] {
            assert!(manifest.artifacts.contains_key(&rel), "{rel} missing from manifest");
            assert!(layout.path(&rel).is_file(), "{rel} missing on disk");
        }
    }
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(layout.path(Layout::REPORT)).unwrap()).unwrap();
    assert_eq!(report.k_list, vec![2, 4]);
    assert_eq!(report.config_hash, cfg.hash());
    for sae in &report.saes {
        assert_eq!(sae.manifolds.len(), 8);
        assert!(sae.mean_r2_at_k_i.is_finite());
    }
    let on_disk = RunManifest::load(&layout.path(Layout::MANIFEST)).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn identical_configs_give_identical_manifests() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_pipeline(&tiny_config(a.path())).unwrap();
    let mb = run_pipeline(&tiny_config(b.path())).unwrap();
    assert_eq!(ma, mb);
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(Layout::MANIFEST)).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn rerun_uses_the_cache_and_reruns_tampered_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    let model = dir.path().join(Layout::model(2));
    let stamp = std::fs::metadata(&model).unwrap().modified().unwrap();
    let metrics = dir.path().join(Layout::metrics(4));
    std::fs::write(&metrics, "tampered").unwrap();
    let second = run_pipeline(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(std::fs::metadata(&model).unwrap().modified().unwrap(), stamp);
    assert_ne!(std::fs::read_to_string(&metrics).unwrap(), "tampered");
}

#[test]
fn failure_at_one_k_leaves_the_other_intact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let blocker = dir.path().join(Layout::metrics(4));
    std::fs::create_dir_all(&blocker).unwrap();
    let manifest = run_pipeline(&cfg).unwrap();
    let failed: Vec<_> = manifest.failures().map(|s| (s.stage.as_str(), s.k)).collect();
    assert_eq!(failed, vec![("eval_k4", Some(4))]);
    for rel in [
        Layout::metrics(2),
        Layout::partition(2),
        Layout::capture(2),
        Layout::fit(4),
    ] {
        assert!(manifest.artifacts.contains_key(&rel), "{rel}");
    }
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(Layout::REPORT)).unwrap()).unwrap();
    assert_eq!(report.k_list, vec![2]);
    let report_stage = manifest.stages.iter().find(|s| s.stage == "report").unwrap();
    assert_eq!(report_stage.status, StageStatus::Completed);
}

#[test]
fn training_failure_skips_dependent_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    std::fs::create_dir_all(dir.path().join(Layout::model(2))).unwrap();
    let mut runner = Runner::new(cfg).unwrap();
    let manifest = runner.run(Target::Report, &[2, 4]).unwrap();
    let status = |name: &str| manifest.stages.iter().find(|s| s.stage == name).map(|s| s.status);
    assert_eq!(status("train_k2"), Some(StageStatus::Failed));
    for name in ["eval_k2", "ising_fit_k2", "discover_k2", "capture_k2"] {
        assert_eq!(status(name), Some(StageStatus::Skipped), "{name}");
    }
    assert_eq!(status("capture_k4"), Some(StageStatus::Completed));
}

#[test]
fn partial_targets_stop_early() {
    let dir = tempfile::tempdir().unwrap();
    let mut runner = Runner::new(tiny_config(dir.path())).unwrap();
    let manifest = runner.run(Target::Train, &[2]).unwrap();
    let names: Vec<_> = manifest.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, vec!["zoo", "data", "train_k2"]);
    assert!(!dir.path().join(Layout::model(4)).exists());
}

#[test]
fn k_above_dictionary_size_is_a_config_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = tiny_config(&out);
    cfg.sae.k_list = vec![2, 64];
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let status = msb()
        .args(["report", "bundle", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());

    let status = msb()
        .args(["sae", "train", "--k", "40", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn cli_stage_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = tiny_config(&out);
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    std::fs::create_dir_all(out.join(Layout::metrics(2))).unwrap();
    let status = msb()
        .args(["eval", "metrics", "--k", "2", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let manifest = RunManifest::load(&out.join(Layout::MANIFEST)).unwrap();
    assert!(manifest.has_failures());
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, "{\"zoo\": 3}").unwrap();
    let status = msb().args(["zoo", "build", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn ingested_codes_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("codes.csv");
    std::fs::write(&csv, "sample,atom,value\n0,1,0.5\n2,0,-1.25\n1,3,2\n").unwrap();
    let first = dir.path().join("codes.msbd");
    let status = msb()
        .args(["ingest", "codes", "--input"])
        .arg(&csv)
        .arg("--output")
        .arg(&first)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let codes = ingest_codes(&first, CodeFormat::Auto).unwrap();
    assert_eq!(codes, codes_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap());
    let second = dir.path().join("again.msbd");
    save_codes(&codes, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn external_codes_are_discovered_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("sample,atom,value\n");
    for n in 0..2000usize {
        let u = 0.5 + (n % 97) as f64 / 97.0;
        let pair = n % 3;
        text.push_str(&format!("{n},{},{u}\n{n},{},{}\n", 2 * pair, 2 * pair + 1, 0.8 * u));
    }
    let csv = dir.path().join("codes.csv");
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("ising");
    let output = msb()
        .args(["ising", "discover", "--format", "csv", "--codes"])
        .arg(&csv)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    for name in ["fit.msif", "partition.csv", "discovery.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let groups: Vec<msb_core::DiscoveredGroup> = serde_json::from_slice(&output.stdout).unwrap();
    let mut atoms: Vec<Vec<usize>> = groups.iter().map(|g| g.atoms.clone()).collect();
    atoms.sort();
    assert_eq!(atoms, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
}
