mod common;

use savc::config::{parse_override, ExperimentConfig};
use savc::Error;
use savc_core::data::Benchmark;

#[test]
fn unknown_keys_are_all_reported() {
    let text = common::TINY.replace("[train]\n", "[train]\nepochz = 3\n") + "\n[loss]\ngamma = 2\n";
    let text = format!("bogus = 1\n{text}");
    let err = ExperimentConfig::from_toml_str(&text, &[]).unwrap_err();
    match &err {
        Error::UnknownKeys(keys) => assert_eq!(keys, &["bogus", "loss.gamma", "train.epochz"]),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.kind(), "unknown_keys");
}

#[test]
fn invalid_values_name_their_keys() {
    let err = ExperimentConfig::from_toml_str("fantasy = \"six_fold\"\n[loss]\ntau = 0.0\n[train]\ntrainable_layers = [\"block7\"]\n", &[])
        .unwrap_err();
    let Error::InvalidFields(fields) = &err else { panic!("unexpected {err}") };
    assert!(fields.iter().any(|f| f.starts_with("fantasy")));
    assert!(fields.iter().any(|f| f.starts_with("loss")));
    assert!(fields.iter().any(|f| f.contains("block7")));
    assert_eq!(err.kind(), "invalid_config");
    assert!(err.to_json()["keys"].as_array().unwrap().len() >= 3);
}

#[test]
fn overrides_apply_before_validation() {
    let o = vec![
        parse_override("train.base_epochs=7").unwrap(),
        parse_override("benchmark=cifar100").unwrap(),
        parse_override("ablation.scl=false").unwrap(),
    ];
    let cfg = ExperimentConfig::from_toml_str(common::TINY, &o).unwrap();
    assert_eq!(cfg.train.base_epochs, 7);
    assert_eq!(cfg.benchmark, Benchmark::Cifar100);
    assert!(!cfg.ablation.scl);
    let setup = cfg.setup().unwrap();
    assert_eq!((setup.weights.alpha, setup.weights.beta), (0.0, 0.0));
    assert!(ExperimentConfig::from_toml_str(common::TINY, &[parse_override("loss.alpha=-1").unwrap()]).is_err());
}

#[test]
fn hash_ignores_name_and_output_but_not_settings() {
    let a = ExperimentConfig::from_toml_str(common::TINY, &[]).unwrap();
    let mut b = a.clone();
    b.name = "other".into();
    b.output_dir = "elsewhere".into();
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn toml_round_trip() {
    let a = ExperimentConfig::from_toml_str(common::TINY, &[]).unwrap();
    let b = ExperimentConfig::from_toml_str(&a.to_toml(), &[]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_reaches_the_trainer() {
    let a = ExperimentConfig::from_toml_str(common::TINY, &[parse_override("seed=42").unwrap()]).unwrap();
    assert_eq!(a.setup().unwrap().train.seed, 42);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::from_file(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
