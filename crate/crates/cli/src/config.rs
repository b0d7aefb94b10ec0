//! Run configuration files.
//!
//! A config is TOML with three tables: `[run]`, `[scenario]` and `[control]`.
//! Every key is optional. Missing keys take the preset of the chosen
//! `scenario.kind` and `control.architecture`, so an empty file gives the
//! standard small-static set-up with the centralised MPFC controller.

use std::path::{Path, PathBuf};

use mpfc_core::harness::Experiment;
use mpfc_core::predictive::{Architecture, ControlConfig};
use mpfc_core::scenarios::{ScenarioKind, ScenarioSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: u64,
    pub n_sim: usize,
    /// Simulated time per run, in seconds.
    pub duration_seconds: f64,
    /// Worker threads; 0 means one per seed.
    pub jobs: usize,
    pub emit_fire_frames: bool,
    /// Relative paths are resolved against the output root.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            master_seed: 2024,
            n_sim: 5,
            duration_seconds: 5000.0,
            jobs: 0,
            emit_fire_frames: false,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub scenario: ScenarioSpec,
    pub control: ControlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(ScenarioKind::SmallStatic, Architecture::CentralisedMpfc)
    }
}

/// A config problem, with the dotted key path and source line when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "`{p}` (line {l}): {}", self.message),
            (Some(p), None) => write!(f, "`{p}`: {}", self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn plain(message: impl Into<String>) -> Self {
        ConfigError {
            path: None,
            line: None,
            message: message.into(),
        }
    }
}

impl RunConfig {
    pub fn preset(kind: ScenarioKind, architecture: Architecture) -> Self {
        RunConfig {
            run: RunSection::default(),
            scenario: ScenarioSpec::new(kind),
            control: ControlConfig::for_architecture(architecture),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
            path: None,
            line: e.span().map(|s| line_at(text, s.start)),
            message: e.message().to_string(),
        })?;
        let user = serde_json::to_value(user).map_err(|e| ConfigError::plain(e.to_string()))?;
        let kind = pick(&user, &["scenario", "kind"], text)?.unwrap_or(ScenarioKind::SmallStatic);
        let architecture = pick(&user, &["control", "architecture"], text)?.unwrap_or(Architecture::CentralisedMpfc);
        let mut merged = serde_json::to_value(Self::preset(kind, architecture)).expect("presets serialise");
        merge(&mut merged, user);
        let config: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            ConfigError {
                line: line_of_key(text, &path),
                path: Some(path),
                message,
            }
        })?;
        config.validate_with(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::plain(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<(), ConfigError> {
        if self.run.n_sim == 0 {
            return Err(ConfigError {
                path: Some("run.n_sim".into()),
                line: line_of_key(text, "run.n_sim"),
                message: "must be at least 1".into(),
            });
        }
        if self.run.master_seed > i64::MAX as u64 {
            return Err(ConfigError {
                path: Some("run.master_seed".into()),
                line: line_of_key(text, "run.master_seed"),
                message: "must fit in a signed 64-bit integer".into(),
            });
        }
        self.experiment().validate().map_err(|e| {
            let (name, message) = match &e {
                mpfc_core::Error::InvalidParameter { name, reason } => (name.to_string(), reason.clone()),
                other => (String::new(), other.to_string()),
            };
            let path = self.key_path(&name);
            ConfigError {
                line: path.as_deref().and_then(|p| line_of_key(text, p)),
                path: path.or((!name.is_empty()).then_some(name)),
                message,
            }
        })
    }

    /// Full dotted path of the first key named `leaf`.
    fn key_path(&self, leaf: &str) -> Option<String> {
        fn walk(v: &Value, prefix: &str, leaf: &str) -> Option<String> {
            let Value::Object(map) = v else {
                return None;
            };
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                if k == leaf {
                    return Some(path);
                }
                if let Some(p) = walk(child, &path, leaf) {
                    return Some(p);
                }
            }
            None
        }
        walk(&serde_json::to_value(self).ok()?, "", leaf)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            scenario: self.scenario.clone(),
            control: self.control.clone(),
            duration_seconds: self.run.duration_seconds,
            n_sim: self.run.n_sim,
            master_seed: self.run.master_seed,
            parallel: self.run.jobs != 1,
            record_fire: self.run.emit_fire_frames,
        }
    }

    /// Canonical TOML with every key present.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// SHA-256 over the canonical JSON form (keys sorted). The output
    /// directory is left out, so moving results does not change the hash.
    pub fn hash(&self) -> String {
        let mut config = self.clone();
        config.run.output_dir = None;
        let canonical = serde_json::to_string(&serde_json::to_value(&config).expect("config serialises")).expect("json");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn pick<T: for<'de> Deserialize<'de>>(user: &Value, path: &[&str], text: &str) -> Result<Option<T>, ConfigError> {
    let mut v = user;
    for key in path {
        match v.get(key) {
            Some(next) => v = next,
            None => return Ok(None),
        }
    }
    let dotted = path.join(".");
    serde_json::from_value(v.clone()).map(Some).map_err(|e| ConfigError {
        line: line_of_key(text, &dotted),
        path: Some(dotted),
        message: e.to_string(),
    })
}

/// Overlays `user` onto `base`, table by table.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line on which a dotted key is set, looking under the matching table header.
pub fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let (table, key) = match path.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", path),
    };
    let mut current = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let full = if current.is_empty() { lhs.to_string() } else { format!("{current}.{lhs}") };
        if full == path || (current == table && lhs == key) {
            return Some(n + 1);
        }
    }
    None
}
