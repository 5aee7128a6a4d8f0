//! Shared fixtures for integration tests.

#![allow(dead_code)]

use std::path::Path;

use sve_core::experiments::ExperimentConfig;

/// A small 3-class task that trains in well under a second.
pub fn tiny_toml(experiment: &str, extra: &str) -> String {
    format!(
        r#"
experiment = "{experiment}"
seeds = [0, 1]
methods = ["single", "sve"]
{extra}

[model]
n_classes = 3
architecture = {{ kind = "mlp", dims = [6, 8] }}

[train]
epochs = 2
batch_size = 16
lr = 0.01
method = "sve"
n_members = 2

[data]
n_train_per_class = 20
n_test_per_class = 20

[data.task]
n_classes = 3
latent_dim = 2
input_dim = 6
noise = 0.3
seed = 3

[pretrain]
n_per_class = 20

[pretrain.train]
epochs = 2
lr = 0.01
method = "single"
"#
    )
}

pub fn tiny(experiment: &str, extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&tiny_toml(experiment, extra)).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}
