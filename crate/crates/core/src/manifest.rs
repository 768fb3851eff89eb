//! Experiment manifests: one TOML file naming the data, the appliance
//! constants, the split and the model and training settings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::synth::Scenario;
use crate::data::{ActivationSpec, ColumnSpec, SamplingConfig, DEFAULT_MAX_GAP_SECONDS};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Built-in appliance constants, keyed by preset name.
pub const PRESETS_TOML: &str = include_str!("../presets/appliances.toml");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Aggregate,
    Appliance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerKind {
    #[default]
    Active,
    /// Only used for the aggregate when a house has no active-power channel.
    Apparent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub house: u32,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appliance: Option<String>,
    pub path: PathBuf,
    #[serde(default)]
    pub power: PowerKind,
    #[serde(default)]
    pub columns: ColumnSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetValues {
    pub on_power_threshold: Option<f64>,
    pub min_on_duration: Option<f64>,
    pub min_off_duration: Option<f64>,
    pub window_length: Option<usize>,
    pub mae_normalizer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(flatten)]
    pub values: PresetValues,
}

/// Fully resolved per-appliance settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Appliance {
    pub name: String,
    pub activation: ActivationSpec,
    pub window_length: usize,
    pub mae_normalizer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    pub house: u32,
    pub appliance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_houses: Vec<u32>,
    pub test_houses: Vec<u32>,
    pub exclude: Vec<Exclusion>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_houses: vec![1, 2, 3, 4],
            test_houses: vec![5],
            exclude: Vec::new(),
        }
    }
}

impl SplitSpec {
    pub fn excluded(&self, house: u32, appliance: &str) -> bool {
        self.exclude.iter().any(|e| e.house == house && e.appliance == appliance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub negatives_per_activation: usize,
    pub max_gap_seconds: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            negatives_per_activation: 1,
            max_gap_seconds: DEFAULT_MAX_GAP_SECONDS,
        }
    }
}

/// Houses generated from a scenario instead of read from disk. Each house in
/// the split gets its own seeded draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
}

/// The manifest as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Path of a separate model config file; exclusive with `[model]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub split: SplitSpec,
    pub appliances: Vec<ApplianceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ManifestFile {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ManifestError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// A validated manifest with presets applied, external configs loaded and
/// paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampling: SamplingSection,
    pub split: SplitSpec,
    pub appliances: Vec<Appliance>,
    pub sources: Vec<Source>,
    pub synthetic: Option<SyntheticSpec>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> ManifestError {
    ManifestError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn presets() -> BTreeMap<String, PresetValues> {
    toml::from_str(PRESETS_TOML).expect("built-in presets parse")
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let file = ManifestFile::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(file, base)
    }

    /// Resolves relative paths against `base`.
    pub fn resolve(file: ManifestFile, base: &Path) -> Result<Self> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let model = match (&file.model, &file.model_config) {
            (Some(_), Some(_)) => return Err(ManifestError::Invalid("set either [model] or model_config, not both".into())),
            (Some(m), None) => m.clone(),
            (None, Some(p)) => {
                let p = at(p);
                ModelConfig::from_toml(&read(&p)?).map_err(|e| parse_err(&p, e))?
            }
            (None, None) => ModelConfig::default(),
        };
        let train = match (&file.train, &file.train_config) {
            (Some(_), Some(_)) => return Err(ManifestError::Invalid("set either [train] or train_config, not both".into())),
            (Some(t), None) => t.clone(),
            (None, Some(p)) => {
                let p = at(p);
                TrainConfig::from_toml(&read(&p)?).map_err(|e| parse_err(&p, e))?
            }
            (None, None) => TrainConfig::default(),
        };
        let presets = presets();
        let appliances = file
            .appliances
            .iter()
            .map(|a| resolve_appliance(a, &presets))
            .collect::<Result<Vec<_>>>()?;
        let sources = file
            .sources
            .iter()
            .map(|s| Source {
                path: at(&s.path),
                ..s.clone()
            })
            .collect();
        let m = Self {
            seed: file.seed,
            output_dir: at(&file.output_dir),
            model,
            train,
            sampling: file.sampling,
            split: file.split,
            appliances,
            sources,
            synthetic: file.synthetic,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ManifestError::Invalid(m));
        self.model.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if self.appliances.is_empty() {
            return bad("no appliances listed".into());
        }
        let mut names = BTreeSet::new();
        for a in &self.appliances {
            if !names.insert(a.name.as_str()) {
                return bad(format!("appliance {:?} listed twice", a.name));
            }
        }
        if !(self.sampling.max_gap_seconds >= 0.0) {
            return bad("sampling.max_gap_seconds must be >= 0".into());
        }
        let train: BTreeSet<_> = self.split.train_houses.iter().collect();
        if let Some(h) = self.split.test_houses.iter().find(|h| train.contains(h)) {
            return bad(format!("house {h} is in both the train and test split"));
        }
        if self.split.train_houses.is_empty() && self.split.test_houses.is_empty() {
            return bad("split names no houses".into());
        }
        match &self.synthetic {
            Some(s) => {
                if !self.sources.is_empty() {
                    return bad("a synthetic manifest cannot also list sources".into());
                }
                s.scenario.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
                for a in &self.appliances {
                    if !s.scenario.appliances.iter().any(|t| t.name == a.name) {
                        return bad(format!("appliance {:?} is not in the synthetic scenario", a.name));
                    }
                }
            }
            None => {
                if self.sources.is_empty() {
                    return bad("no data sources and no [synthetic] section".into());
                }
                for s in &self.sources {
                    match (s.role, &s.appliance) {
                        (Role::Appliance, None) => return bad(format!("{}: appliance source needs a name", s.path.display())),
                        (Role::Aggregate, Some(_)) => {
                            return bad(format!("{}: aggregate source cannot name an appliance", s.path.display()))
                        }
                        (Role::Appliance, Some(_)) if s.power == PowerKind::Apparent => {
                            return bad(format!("{}: apparent power is only accepted for the aggregate", s.path.display()))
                        }
                        _ => {}
                    }
                    if !s.path.is_file() {
                        return bad(format!("data file {} does not exist", s.path.display()));
                    }
                }
                for &h in self.split.train_houses.iter().chain(&self.split.test_houses) {
                    let has_meter = self.sources.iter().any(|s| s.house == h && s.role == Role::Appliance);
                    if has_meter && self.aggregate_source(h).is_none() {
                        return bad(format!("house {h} has appliance meters but no aggregate source"));
                    }
                }
            }
        }
        Ok(())
    }

    /// The active-power aggregate of a house, or its apparent-power channel
    /// when no active one is listed.
    pub fn aggregate_source(&self, house: u32) -> Option<&Source> {
        let mut candidates: Vec<&Source> = self
            .sources
            .iter()
            .filter(|s| s.house == house && s.role == Role::Aggregate)
            .collect();
        candidates.sort_by_key(|s| s.power != PowerKind::Active);
        candidates.first().copied()
    }

    pub fn appliance_source(&self, house: u32, appliance: &str) -> Option<&Source> {
        self.sources
            .iter()
            .find(|s| s.house == house && s.role == Role::Appliance && s.appliance.as_deref() == Some(appliance))
    }

    pub fn appliance(&self, name: &str) -> Option<&Appliance> {
        self.appliances.iter().find(|a| a.name == name)
    }

    pub fn sampling_config(&self, appliance: &Appliance) -> SamplingConfig {
        SamplingConfig {
            window_length: appliance.window_length,
            negatives_per_activation: self.sampling.negatives_per_activation,
            max_gap_seconds: self.sampling.max_gap_seconds,
        }
    }

    /// SHA-256 over everything that shapes the experiment's numbers: seed,
    /// appliance constants, sampling, split, model and training settings.
    pub fn config_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.model.to_toml());
        h.update(self.train.to_toml());
        h.update(toml::to_string(&self.sampling).expect("serializes"));
        h.update(toml::to_string(&self.split).expect("serializes"));
        for a in &self.appliances {
            h.update(format!("{a:?}"));
        }
        if let Some(s) = &self.synthetic {
            h.update(toml::to_string(s).expect("serializes"));
        }
        hex(&h.finalize())
    }
}

/// Digest of a model config alone, used to compare checkpoints against a
/// manifest.
pub fn model_digest(config: &ModelConfig) -> String {
    hex(&Sha256::digest(config.to_toml()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_appliance(entry: &ApplianceEntry, presets: &BTreeMap<String, PresetValues>) -> Result<Appliance> {
    let base = match &entry.preset {
        Some(p) => presets
            .get(p)
            .cloned()
            .ok_or_else(|| ManifestError::Invalid(format!("unknown preset {p:?}; known: {:?}", presets.keys().collect::<Vec<_>>())))?,
        None => PresetValues::default(),
    };
    let v = &entry.values;
    let missing = |field: &str| ManifestError::Invalid(format!("appliance {:?} has no {field}", entry.name));
    let activation = ActivationSpec {
        on_power_threshold: v.on_power_threshold.or(base.on_power_threshold).ok_or_else(|| missing("on_power_threshold"))?,
        min_on_duration: v.min_on_duration.or(base.min_on_duration).ok_or_else(|| missing("min_on_duration"))?,
        min_off_duration: v.min_off_duration.or(base.min_off_duration).ok_or_else(|| missing("min_off_duration"))?,
    };
    activation.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
    let window_length = v.window_length.or(base.window_length).ok_or_else(|| missing("window_length"))?;
    if window_length == 0 {
        return Err(ManifestError::Invalid(format!("appliance {:?}: window_length must be positive", entry.name)));
    }
    Ok(Appliance {
        name: entry.name.clone(),
        activation,
        window_length,
        mae_normalizer: v.mae_normalizer.or(base.mae_normalizer),
    })
}
