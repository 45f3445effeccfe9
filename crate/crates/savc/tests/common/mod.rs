#![allow(dead_code)]

use std::path::Path;

use savc::config::ExperimentConfig;

/// A synthetic experiment small enough to finish in about a second.
pub const TINY: &str = r#"
name = "tiny"
benchmark = "synthetic"
seed = 3
fantasy = "two_fold_rotations"

[schedule]
base_classes = 3
incremental_sessions = 2
ways = 2
shots = 2
resolution = 12

[synthetic]
num_classes = 7
train_per_class = 6
test_per_class = 3

[encoder]
projection_dim = 8
architecture = { kind = "small_conv", widths = [4, 8, 8, 8] }

[contrast]
queue_len = 64
n_local = 1

[train]
batch_size = 6
base_epochs = 2
incremental_epochs = 2
"#;

pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(TINY, &[]).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}
