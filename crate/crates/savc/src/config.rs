//! Experiment configuration: a TOML document with a fixed schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use savc_core::data::{Benchmark, SessionSchedule, SyntheticConfig};
use savc_core::metrics::SeparationOptions;
use savc_core::network::{CLASSIFIER, PROJECTOR};
use savc_core::objective::{AblationToggles, LossWeights};
use savc_core::trainer::{ContrastSettings, EncoderSettings, FscilSetup, TrainConfig};
use savc_core::FantasySet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSettings {
    /// Embeddings are uniformly subsampled above this many points.
    pub max_points: usize,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self { max_points: 10_000 }
    }
}

/// Everything that defines one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub benchmark: Benchmark,
    pub data_root: Option<PathBuf>,
    /// JSON file with explicit shot indices per incremental session.
    pub session_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub fantasy: String,
    pub loss: LossWeights,
    pub contrast: ContrastSettings,
    pub train: TrainConfig,
    pub encoder: EncoderSettings,
    pub ablation: AblationToggles,
    /// Overrides the benchmark's default schedule.
    pub schedule: Option<SessionSchedule>,
    pub synthetic: SyntheticConfig,
    pub metrics: MetricsSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "savc".into(),
            benchmark: Benchmark::Synthetic,
            data_root: None,
            session_manifest: None,
            output_dir: PathBuf::from("runs/savc"),
            seed: 0,
            fantasy: "four_fold_rotations".into(),
            loss: LossWeights::default(),
            contrast: ContrastSettings::default(),
            train: TrainConfig::default(),
            encoder: EncoderSettings::default(),
            ablation: AblationToggles::default(),
            schedule: None,
            synthetic: SyntheticConfig::default(),
            metrics: MetricsSettings::default(),
        }
    }
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty override key in {path:?}")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override {path:?}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key.path=value`; the value is read as TOML and falls back to a
/// plain string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override {s:?} is not of the form key=value")))?;
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl ExperimentConfig {
    /// Parses a TOML document, applies `overrides` and validates. Every key
    /// the schema does not know is reported at once.
    pub fn from_toml_str(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        let mut unknown = Vec::new();
        let cfg: ExperimentConfig = serde_ignored::deserialize(toml::Value::Table(table), |path| unknown.push(path.to_string()))
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            unknown.sort();
            return Err(Error::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn schedule(&self) -> SessionSchedule {
        self.schedule.unwrap_or_else(|| self.benchmark.default_schedule())
    }

    pub fn fantasy_set(&self) -> Result<FantasySet> {
        Ok(FantasySet::by_name(&self.fantasy)?)
    }

    /// Checks every field and reports all offending keys together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |key: &str, r: std::result::Result<(), String>| {
            if let Err(m) = r {
                bad.push(format!("{key}: {m}"));
            }
        };
        check("fantasy", FantasySet::by_name(&self.fantasy).map(|_| ()).map_err(|e| e.to_string()));
        check("loss", self.loss.validate().map_err(|e| e.to_string()));
        check("train", self.train.validate().map_err(|e| e.to_string()));
        check("contrast.aug", self.contrast.aug.validate().map_err(|e| e.to_string()));
        check("contrast.queue_len", if self.contrast.queue_len >= 1 { Ok(()) } else { Err("must be at least 1".into()) });
        check(
            "contrast.encoder_momentum",
            if (0.0..=1.0).contains(&self.contrast.encoder_momentum) { Ok(()) } else { Err("must lie in [0, 1]".into()) },
        );
        check(
            "contrast.overlap_threshold",
            if (0.0..=1.0).contains(&self.contrast.overlap_threshold) { Ok(()) } else { Err("must lie in [0, 1]".into()) },
        );
        check("encoder.projection_dim", if self.encoder.projection_dim >= 1 { Ok(()) } else { Err("must be at least 1".into()) });
        check("schedule", self.schedule().validate().map_err(|e| e.to_string()));
        check("metrics.max_points", if self.metrics.max_points >= 2 { Ok(()) } else { Err("must be at least 2".into()) });
        if self.benchmark == Benchmark::Synthetic {
            check("synthetic", self.synthetic.validate().map_err(|e| e.to_string()));
            let total = self.schedule().total_classes();
            check(
                "synthetic.num_classes",
                if self.synthetic.num_classes >= total { Ok(()) } else { Err(format!("schedule needs {total} classes")) },
            );
        }
        match self.encoder.architecture.build() {
            Ok(backbone) => {
                let mut names: Vec<String> = backbone.layer_names();
                names.push(PROJECTOR.into());
                names.push(CLASSIFIER.into());
                for l in &self.train.trainable_layers {
                    if !names.contains(l) {
                        bad.push(format!("train.trainable_layers: unknown layer {l:?} (known: {})", names.join(", ")));
                    }
                }
            }
            Err(e) => bad.push(format!("encoder.architecture: {e}")),
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidFields(bad))
        }
    }

    /// Core settings after the ablation toggles are applied.
    pub fn setup(&self) -> Result<FscilSetup> {
        let mut train = self.train.clone();
        train.seed = self.seed;
        let setup = FscilSetup {
            fantasy: self.fantasy_set()?,
            weights: self.loss,
            contrast: self.contrast.clone(),
            train,
            encoder: self.encoder.clone(),
            separation: SeparationOptions { max_points: self.metrics.max_points, seed: self.seed },
        };
        Ok(setup.with_ablation(self.ablation))
    }

    /// SHA-256 over the canonical JSON form, leaving out the run name and
    /// output location.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("configuration serializes to JSON");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("name");
            obj.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&v).expect("JSON value serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn override_values_are_typed() {
        assert_eq!(parse_override("train.base_epochs=5").unwrap().1, toml::Value::Integer(5));
        assert_eq!(parse_override("fantasy=identity").unwrap().1, toml::Value::String("identity".into()));
        assert_eq!(parse_override("ablation.scl=false").unwrap().1, toml::Value::Boolean(false));
        assert!(parse_override("nokey").is_err());
    }
}
