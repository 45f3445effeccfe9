mod common;

use std::process::Command;

use savc::checkpoint;
use savc::config::parse_override;
use savc::embeddings::{self, EmbeddingRow};
use savc::experiment::{compare_runs, dump_embeddings, embedding_rows, metrics_from_dump};
use savc::report::{self, Manifest, RunStatus};
use savc::{run_experiment, Error, ExperimentConfig};
use savc_core::data::Benchmark;
use savc_core::metrics::SeparationOptions;

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.status, RunStatus::Complete);
    assert_eq!(out.sessions.len(), 3);
    for t in 0..3 {
        for f in [format!("session_{t}.json"), format!("separation_{t}.json"), format!("predictions_{t}.csv"), format!("confusion_{t}.csv")]
        {
            assert!(dir.path().join(&f).is_file(), "{f}");
        }
        assert!(report::checkpoint_path(dir.path(), t).is_file());
    }
    let manifest: Manifest = report::read_json(&dir.path().join(report::MANIFEST)).unwrap();
    assert_eq!(manifest.status, RunStatus::Complete);
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(manifest.sessions_completed, 3);
    let table = report::read_session_table(&dir.path().join(report::SESSION_TABLE)).unwrap();
    assert_eq!(table.iter().map(|r| r.num_classes).collect::<Vec<_>>(), vec![3, 5, 7]);
    assert!(table[0].r2_mutual.is_none() && table[2].r2_mutual.is_some());
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), out.sessions.iter().map(|s| s.train_steps).sum::<usize>());
    let confusion = std::fs::read_to_string(dir.path().join("confusion_2.csv")).unwrap();
    let total: u64 = confusion.lines().flat_map(|l| l.split(',')).map(|v| v.parse::<u64>().unwrap()).sum();
    assert_eq!(total as usize, out.sessions[2].num_test);

    let again = tempfile::tempdir().unwrap();
    run_experiment(&common::tiny_config(again.path())).unwrap();
    for f in ["session_table.csv", "separation_0.json", "separation_2.json", "manifest.json", "train_log.jsonl"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
    }
    let delta = compare_runs(dir.path(), again.path()).unwrap();
    assert_eq!(delta.delta_last, 0.0);
}

#[test]
fn checkpoint_restores_the_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    run_experiment(&cfg).unwrap();
    let ckpt = checkpoint::load(&report::checkpoint_path(dir.path(), 2)).unwrap();
    assert_eq!(ckpt.session, 2);
    assert_eq!(ckpt.config_hash, cfg.hash());
    assert_eq!(ckpt.bank.len(), 2 * 7);
    let mut bytes = Vec::new();
    checkpoint::write_to(&mut bytes, ckpt.session, &ckpt.config_hash, &ckpt.pair, &ckpt.queue, &ckpt.bank).unwrap();
    assert_eq!(bytes, std::fs::read(report::checkpoint_path(dir.path(), 2)).unwrap());
    let path = std::path::Path::new("x.ckpt");
    assert!(checkpoint::read_from(&bytes[..bytes.len() - 3], path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::read_from(&bad, path).is_err());
}

#[test]
fn embedding_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    run_experiment(&cfg).unwrap();
    let ckpt_path = report::checkpoint_path(dir.path(), 2);
    let a = dir.path().join("emb_a.csv");
    let b = dir.path().join("emb_b.csv");
    let n = dump_embeddings(&cfg, &ckpt_path, &a).unwrap();
    assert_eq!(n, 7 * 3);
    dump_embeddings(&cfg, &ckpt_path, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let ds = match savc::datasets::load(&cfg).unwrap() {
        savc::datasets::DataStatus::Ready(ds) => ds,
        _ => unreachable!(),
    };
    let in_memory = embedding_rows(&ds, &checkpoint::load(&ckpt_path).unwrap()).unwrap();
    assert_eq!(embeddings::load(&a).unwrap(), in_memory);
    assert_eq!(in_memory.iter().filter(|r| r.session == 0).count(), 9);

    let report = metrics_from_dump(&a, SeparationOptions::default()).unwrap();
    assert_eq!(report.base_ids, vec![0, 1, 2]);
    assert_eq!(report.novel_ids, vec![3, 4, 5, 6]);
    assert!(report.r2_base <= 1.0 && report.r2_mutual.unwrap() <= 1.0);
}

#[test]
fn embedding_file_shape() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<EmbeddingRow> = (0..10)
        .map(|i| EmbeddingRow { sample_id: i, label: i % 3, session: 0, features: (0..16).map(|j| (i * j) as f32 / 7.0).collect() })
        .collect();
    let path = dir.path().join("e.csv");
    embeddings::dump(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines.iter().all(|l| l.split(',').count() == 19));
    assert!(lines[0].starts_with("sample_id,label,session,f0,"));
    assert_eq!(embeddings::load(&path).unwrap(), rows);
}

#[test]
fn missing_real_benchmark_is_a_dry_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(dir.path());
    cfg.benchmark = Benchmark::Cifar100;
    cfg.schedule = None;
    cfg.data_root = Some(dir.path().join("nowhere"));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.status, RunStatus::DryRun);
    let hint = out.data_hint.unwrap();
    assert!(hint.contains("60 classes") && hint.contains("8 incremental sessions") && hint.contains("5-way 5-shot"), "{hint}");
    let manifest: Manifest = report::read_json(&dir.path().join(report::MANIFEST)).unwrap();
    assert_eq!(manifest.status, RunStatus::DryRun);
    assert_eq!((manifest.schedule.base_classes, manifest.schedule.incremental_sessions), (60, 8));
}

#[test]
fn compare_rejects_different_schedules() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&common::tiny_config(a.path())).unwrap();
    let mut cfg = common::tiny_config(b.path());
    cfg.schedule.as_mut().unwrap().incremental_sessions = 1;
    run_experiment(&cfg).unwrap();
    assert!(matches!(compare_runs(a.path(), b.path()), Err(Error::Input(_))));
}

#[test]
fn divergence_leaves_a_failed_manifest_and_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(common::TINY, &[parse_override("train.base_lr=1e30").unwrap()]).unwrap();
    let cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..cfg };
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.kind(), "divergence");
    let manifest: Manifest = report::read_json(&dir.path().join(report::MANIFEST)).unwrap();
    assert_eq!(manifest.status, RunStatus::Failed);
    assert_eq!(manifest.error.unwrap()["error"], "divergence");
    let ckpt = checkpoint::load(&report::checkpoint_dir(dir.path()).join("last_good.ckpt")).unwrap();
    assert!(ckpt.pair.query.all_finite());
}

#[test]
fn cli_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "bogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_savc")).args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "unknown_keys");
    assert_eq!(err["keys"][0], "bogus");
}

#[test]
fn cli_run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, common::TINY).unwrap();
    let run_dir = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_savc"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--set")
        .arg(format!("output_dir={:?}", run_dir.display().to_string()))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("session 2 (7 classes)"));
    let out =
        Command::new(env!("CARGO_BIN_EXE_savc")).arg("compare").arg(&run_dir).arg(&run_dir).args(["--name", "tiny"]).output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("tiny ") && line.trim_end().ends_with("+0.00"), "{line}");
}
