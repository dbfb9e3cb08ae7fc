//! Experiment configuration: JSON schema, validation and bundled presets.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ist_core::classifiers::{BackboneSpec, SoftmaxConfig};
use ist_core::clustering::ClusterMethod;
use ist_core::dataset::{BlobConfig, NoiseBand};
use ist_core::selftrain::{Mode, SelfTrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset '{0}' (available: blobs-small, blobs-noisy, mnist-100)")]
    UnknownPreset(String),
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSpec {
    Blobs(BlobConfig),
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `max_rows` images.
        #[serde(default)]
        max_rows: Option<usize>,
    },
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub labels_per_class: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    #[serde(default)]
    pub backbone: BackboneSpec,
    /// Shared by every run; `mode` is set per run.
    #[serde(default)]
    pub selftrain: SelfTrainConfig,
    /// One incremental run per method and seed.
    #[serde(default = "default_methods")]
    pub methods: Vec<ClusterMethod>,
    /// Also run classical self-training as the baseline.
    #[serde(default = "default_true")]
    pub include_st: bool,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Standardize features with statistics of the training rows.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_methods() -> Vec<ClusterMethod> {
    vec![ClusterMethod::KMeans]
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parses JSON text; `origin` names the source in error messages.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                origin: origin.to_string(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: strip_position(&inner.to_string()),
            }
        })
    }

    /// Reads, parses and validates a config file. Relative dataset paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Blobs(_) => {}
            DatasetSpec::Csv { path, .. } => fix(path),
            DatasetSpec::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed".into());
        }
        if self.methods.is_empty() && !self.include_st {
            return bad("nothing to run: `methods` is empty and `include_st` is false".into());
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return bad(format!("clustering method '{m}' is listed twice"));
            }
        }
        if self.split.labels_per_class == 0 {
            return bad("`split.labels_per_class` must be at least 1".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad(format!(
                "`split.test_fraction` must lie in (0, 1), got {}",
                self.split.test_fraction
            ));
        }
        let ist = SelfTrainConfig {
            mode: Mode::Ist,
            ..self.selftrain.clone()
        };
        ist.validate()
            .map_err(|e| ConfigError::Invalid(format!("`selftrain`: {e}")))?;
        let must_exist = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{what} file {} does not exist",
                    p.display()
                )))
            }
        };
        match &self.dataset {
            DatasetSpec::Blobs(b) => {
                if b.class_count < 2 || b.per_class == 0 || b.dims == 0 || !(b.spread > 0.0) {
                    return bad(
                        "blobs need >= 2 classes, positive per_class, dims and spread".into(),
                    );
                }
            }
            DatasetSpec::Csv { path, .. } => must_exist(path, "dataset")?,
            DatasetSpec::Idx { images, labels, .. } => {
                must_exist(images, "IDX image")?;
                must_exist(labels, "IDX label")?;
            }
        }
        Ok(())
    }

    /// Replaces the seed list with a single seed.
    pub fn with_seed_override(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        self
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "experiment".into())
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub const PRESETS: [&str; 3] = ["blobs-small", "blobs-noisy", "mnist-100"];

/// A bundled configuration. `mnist-100` points at IDX files named as in the
/// original distribution in the working directory; override them with
/// [`with_idx_paths`].
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let blobs = |noise: Option<NoiseBand>, dir: &str| ExperimentConfig {
        name: Some(name.to_string()),
        dataset: DatasetSpec::Blobs(BlobConfig {
            noise,
            ..BlobConfig::new(4, 600, 2, 0.5, 0)
        }),
        split: SplitSpec {
            labels_per_class: 4,
            test_fraction: default_test_fraction(),
        },
        backbone: BackboneSpec::default(),
        selftrain: SelfTrainConfig::default(),
        methods: default_methods(),
        include_st: true,
        seeds: (0..5).collect(),
        output_dir: PathBuf::from("results").join(dir),
        standardize: true,
    };
    match name {
        "blobs-small" => Ok(blobs(None, name)),
        "blobs-noisy" => Ok(blobs(
            Some(NoiseBand {
                per_class: 150,
                spread: 1.2,
            }),
            name,
        )),
        "mnist-100" => Ok(ExperimentConfig {
            name: Some(name.to_string()),
            dataset: DatasetSpec::Idx {
                images: PathBuf::from("train-images-idx3-ubyte"),
                labels: PathBuf::from("train-labels-idx1-ubyte"),
                max_rows: Some(12_000),
            },
            split: SplitSpec {
                labels_per_class: 10,
                test_fraction: default_test_fraction(),
            },
            backbone: BackboneSpec::SoftmaxSgd(SoftmaxConfig::default()),
            selftrain: SelfTrainConfig::default(),
            methods: default_methods(),
            include_st: true,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("results").join(name),
            // Pixels are already in [0, 1]; many are constant zero.
            standardize: false,
        }),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

/// Points an IDX dataset at user-supplied files.
pub fn with_idx_paths(
    mut cfg: ExperimentConfig,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
) -> ExperimentConfig {
    if let DatasetSpec::Idx {
        images: i,
        labels: l,
        ..
    } = &mut cfg.dataset
    {
        if let Some(p) = images {
            *i = p;
        }
        if let Some(p) = labels {
            *l = p;
        }
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "dataset": {"source": "blobs", "class_count": 3, "per_class": 20, "dims": 2, "spread": 0.5, "seed": 1},
  "split": {"labels_per_class": 2},
  "seeds": [1, 2]
}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL, "inline").unwrap();
        assert_eq!(cfg.methods, vec![ClusterMethod::KMeans]);
        assert!(cfg.include_st && cfg.standardize);
        assert_eq!(cfg.split.test_fraction, 0.2);
        assert_eq!(cfg.selftrain.threshold, 0.95);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_method_is_rejected_with_position() {
        let text = MINIMAL.replace(
            "\"seeds\"",
            "\"methods\": [\"kmeans\", \"dbscan\"],\n  \"seeds\"",
        );
        let err = ExperimentConfig::from_json(&text, "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cfg.json:4:"), "{msg}");
        assert!(msg.contains("methods[1]"), "{msg}");
        assert!(msg.contains("dbscan"), "{msg}");
    }

    #[test]
    fn type_errors_name_the_field() {
        let text = MINIMAL.replace("\"labels_per_class\": 2", "\"labels_per_class\": \"two\"");
        let msg = ExperimentConfig::from_json(&text, "c")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("split.labels_per_class"), "{msg}");
        assert!(msg.starts_with("c:3:"), "{msg}");
    }

    #[test]
    fn unknown_top_level_field_is_rejected() {
        let text = MINIMAL.replace("\"seeds\"", "\"sedes\": [], \"seeds\"");
        assert!(ExperimentConfig::from_json(&text, "c").is_err());
    }

    #[test]
    fn semantic_validation() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL, "c").unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL, "c").unwrap();
        cfg.selftrain.threshold = 2.0;
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("threshold"));
        let mut cfg = ExperimentConfig::from_json(MINIMAL, "c").unwrap();
        cfg.methods = vec![ClusterMethod::Birch, ClusterMethod::Birch];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL, "c").unwrap();
        cfg.dataset = DatasetSpec::Csv {
            path: "/definitely/missing.csv".into(),
            label_column: "label".into(),
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("does not exist"));
    }

    #[test]
    fn presets_are_well_formed() {
        for name in ["blobs-small", "blobs-noisy"] {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&json, name).unwrap(), cfg);
        }
        let mnist = preset("mnist-100").unwrap();
        assert!(mnist.validate().is_err() || Path::new("train-images-idx3-ubyte").exists());
        let moved = with_idx_paths(mnist, Some("/x/img".into()), Some("/x/lbl".into()));
        match moved.dataset {
            DatasetSpec::Idx { images, labels, .. } => {
                assert_eq!(
                    (images, labels),
                    (PathBuf::from("/x/img"), PathBuf::from("/x/lbl"))
                );
            }
            _ => panic!("mnist preset is an IDX dataset"),
        }
        assert!(matches!(
            preset("cifar"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }
}
