//! Run configuration: one JSON document with a section per stage.
//!
//! Loading starts from a preset, overlays the user's file key by key, then
//! applies command-line overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use g2g::extract::{ExtractionConfig, SmoothnessRule};
use g2g::g2g::G2GConfig;
use g2g::noise::NoiseKind;
use g2g::wgan::WganConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

/// Where the corpus comes from and how it is corrupted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Noise spec, e.g. `gauss:25` or `corr:25:k=16`.
    pub noise: String,
    /// Builtin toy corpus size; ignored when a clean directory is given.
    pub train_images: usize,
    /// Held-out images used by `denoise` and `evaluate`.
    pub test_images: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Dwt,
    Gcbd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    pub patch_size: usize,
    pub stride: Option<usize>,
    pub rule: RuleKind,
    /// DWT threshold; `None` picks the default for the noise family.
    pub lambda: Option<f64>,
    pub mu: f64,
    pub gamma: f64,
    pub subpatch: usize,
    pub max_patches: Option<usize>,
}

impl ExtractSection {
    pub fn resolve(&self, noise: &NoiseKind) -> ExtractionConfig {
        let rule = match self.rule {
            RuleKind::Dwt => SmoothnessRule::Dwt {
                lambda: self.lambda.unwrap_or_else(|| noise.default_lambda()),
            },
            RuleKind::Gcbd => SmoothnessRule::Gcbd {
                mu: self.mu,
                gamma: self.gamma,
                subpatch: self.subpatch,
            },
        };
        ExtractionConfig {
            patch_size: self.patch_size,
            stride: self.stride,
            rule,
            max_patches: self.max_patches,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Which noisy images `denoise` processes by default.
    pub split: Split,
}

/// Filesystem locations. Not part of the fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub work_dir: PathBuf,
    /// Clean PNG corpus to use instead of the builtin toy images.
    pub clean_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("g2g-work"),
            clean_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataConfig,
    pub extract: ExtractSection,
    pub wgan: WganConfig,
    pub g2g: G2GConfig,
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: Paths,
}

/// Pipeline stages in order. Each stage's fingerprint covers the config
/// sections it and its predecessors read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synthesize,
    Extract,
    TrainWgan,
    TrainDenoiser,
    Denoise,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synthesize,
        Stage::Extract,
        Stage::TrainWgan,
        Stage::TrainDenoiser,
        Stage::Denoise,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synthesize => "synthesize",
            Stage::Extract => "extract",
            Stage::TrainWgan => "train-wgan",
            Stage::TrainDenoiser => "train-denoiser",
            Stage::Denoise => "denoise",
            Stage::Evaluate => "evaluate",
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Synthesize => &["seed", "data"],
            Stage::Extract => &["seed", "data", "extract"],
            Stage::TrainWgan => &["seed", "data", "extract", "wgan"],
            Stage::TrainDenoiser | Stage::Denoise => &["seed", "data", "extract", "wgan", "g2g"],
            Stage::Evaluate => &["seed", "data", "extract", "wgan", "g2g", "eval"],
        }
    }
}

impl RunConfig {
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            seed: 0,
            data: DataConfig {
                noise: "gauss:25".into(),
                train_images: 400,
                test_images: 68,
                height: 180,
                width: 180,
            },
            extract: ExtractSection {
                patch_size: 96,
                stride: None,
                rule: RuleKind::Dwt,
                lambda: None,
                mu: 0.1,
                gamma: 0.1,
                subpatch: 32,
                max_patches: None,
            },
            wgan: WganConfig::paper(1),
            g2g: G2GConfig::paper(),
            eval: EvalSection { split: Split::Test },
            paths: Paths::default(),
        }
    }

    pub fn desk() -> Self {
        let paper = Self::paper();
        Self {
            preset: Preset::Desk,
            data: DataConfig {
                train_images: 32,
                test_images: 8,
                height: 64,
                width: 64,
                ..paper.data
            },
            extract: ExtractSection {
                patch_size: 16,
                subpatch: 8,
                ..paper.extract
            },
            wgan: WganConfig::desk(1),
            g2g: G2GConfig::desk(),
            ..paper
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Preset (the flag, else the file's `preset` key, else paper), then
    /// the file overlaid on it.
    pub fn load(file: Option<&Path>, preset: Option<Preset>) -> Result<Self, CliError> {
        let overlay = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(CliError::Usage(format!("config {} must be a JSON object", p.display())));
                }
                Some(v)
            }
            None => None,
        };
        let from_file = overlay
            .as_ref()
            .and_then(|v| v.get("preset"))
            .map(|p| serde_json::from_value::<Preset>(p.clone()))
            .transpose()
            .map_err(|e| CliError::Usage(format!("bad preset in config: {e}")))?;
        let chosen = preset.or(from_file).unwrap_or(Preset::Paper);
        let mut base = serde_json::to_value(Self::preset(chosen)).expect("config serializes");
        if let Some(mut o) = overlay {
            if let Some(obj) = o.as_object_mut() {
                obj.remove("preset");
            }
            merge(&mut base, o);
        }
        let cfg: Self = serde_json::from_value(base).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noise_kind(&self) -> Result<NoiseKind, CliError> {
        self.data.noise.parse::<NoiseKind>().map_err(CliError::from)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.noise_kind()?;
        if self.data.train_images == 0 || self.data.height == 0 || self.data.width == 0 {
            return Err(CliError::Usage("data.train_images, height and width must be ≥ 1".into()));
        }
        self.extract.resolve(&kind).validate()?;
        self.wgan.validate()?;
        self.g2g.validate()?;
        if self.wgan.arch.channels != 1 && self.paths.clean_dir.is_none() {
            return Err(CliError::Usage("the builtin toy corpus is grayscale; set wgan.arch.channels to 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON (sorted keys) without `paths` and
    /// `preset`.
    pub fn fingerprint(&self) -> String {
        self.fingerprint_of(&["seed", "data", "extract", "wgan", "g2g", "eval"])
    }

    pub fn stage_fingerprint(&self, stage: Stage) -> String {
        self.fingerprint_of(stage.sections())
    }

    fn fingerprint_of(&self, keys: &[&str]) -> String {
        let full = serde_json::to_value(self).expect("config serializes");
        let picked: serde_json::Map<String, Value> = keys
            .iter()
            .map(|k| (k.to_string(), full[*k].clone()))
            .collect();
        let canonical = serde_json::to_string(&Value::Object(picked)).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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
