//! The declarative run configuration: one TOML document drives every
//! subcommand, with per-flag overrides. Unknown keys are rejected. The
//! zero-flag defaults are the reference regime: five pretrained backbones,
//! 100 epochs of SGD at learning rate 0.001 with momentum 0.9, batch size 8,
//! best model by validation loss on a stratified 20% split.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use histopad_core::augment::{JitterSpec, Placement};
use histopad_core::model::{BackboneSpec, EnsembleSpec};
use histopad_core::train::{PaddingOverrides, SelectionMode, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<PaddingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<JitterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaddingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSection {
    #[serde(default = "default_photometric_delta")]
    pub brightness: f64,
    #[serde(default = "default_photometric_delta")]
    pub contrast: f64,
    #[serde(default = "default_photometric_delta")]
    pub saturation: f64,
    #[serde(default = "default_hue_delta")]
    pub hue: f64,
}

fn default_photometric_delta() -> f64 {
    0.2
}

fn default_hue_delta() -> f64 {
    0.05
}

impl Default for JitterSection {
    fn default() -> Self {
        Self {
            brightness: default_photometric_delta(),
            contrast: default_photometric_delta(),
            saturation: default_photometric_delta(),
            hue: default_hue_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub backbones: Vec<String>,
    #[serde(default = "default_pretrained")]
    pub pretrained: bool,
}

fn default_pretrained() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

/// Per-flag overrides applied on top of the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub members: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub selection: Option<SelectionMode>,
    pub backbones: Option<Vec<String>>,
}

/// A validated, fully resolved run: every nested spec ready to hand to the
/// library.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jitter: JitterSpec,
    pub ensemble: EnsembleSpec,
    pub train: TrainConfig,
    pub padding_overrides: PaddingOverrides,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn resolve(&self, overrides: &Overrides) -> anyhow::Result<ResolvedConfig> {
        let seed = overrides.seed.unwrap_or(self.seed);
        let output_dir = overrides
            .out
            .clone()
            .unwrap_or_else(|| self.output_dir.clone());

        let jitter_section = self.jitter.clone().unwrap_or_default();
        let jitter = JitterSpec::new(
            jitter_section.brightness,
            jitter_section.contrast,
            jitter_section.saturation,
            jitter_section.hue,
            seed,
        )?;

        let (mut names, pretrained) = match (&overrides.backbones, &self.ensemble) {
            (Some(names), section) => (
                names.clone(),
                section.as_ref().map_or(default_pretrained(), |s| s.pretrained),
            ),
            (None, Some(section)) => (section.backbones.clone(), section.pretrained),
            (None, None) => {
                let defaults = EnsembleSpec::default_five();
                (
                    defaults
                        .members
                        .iter()
                        .map(|m| m.architecture.clone())
                        .collect(),
                    default_pretrained(),
                )
            }
        };
        if let Some(members) = overrides.members {
            if members == 0 {
                bail!("--members must be at least 1");
            }
            if members > names.len() {
                bail!(
                    "--members {} exceeds the {} configured backbones",
                    members,
                    names.len()
                );
            }
            names.truncate(members);
        }
        let members = names
            .iter()
            .map(|name| Ok(BackboneSpec::named(name)?.with_pretrained(pretrained)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let ensemble = EnsembleSpec::new(members)?;

        let section = self.train.clone().unwrap_or_default();
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: overrides.epochs.or(section.epochs).unwrap_or(defaults.epochs),
            learning_rate: overrides
                .learning_rate
                .or(section.learning_rate)
                .unwrap_or(defaults.learning_rate),
            momentum: overrides
                .momentum
                .or(section.momentum)
                .unwrap_or(defaults.momentum),
            batch_size: section.batch_size.unwrap_or(defaults.batch_size),
            seed,
            selection_mode: overrides
                .selection
                .or(section.selection)
                .unwrap_or(defaults.selection_mode),
            validation_fraction: section
                .validation_fraction
                .unwrap_or(defaults.validation_fraction),
        };
        train.validate()?;

        let padding = self.padding.clone().unwrap_or_default();
        let padding_overrides = PaddingOverrides {
            target_height: padding.target_height,
            target_width: padding.target_width,
            fill: padding.fill,
            placement: padding.placement,
        };

        Ok(ResolvedConfig {
            dataset_root: self.dataset_root.clone(),
            output_dir,
            seed,
            jitter,
            ensemble,
            train,
            padding_overrides,
        })
    }
}

pub fn parse_selection(text: &str) -> anyhow::Result<SelectionMode> {
    match text {
        "val" => Ok(SelectionMode::ValidationLoss),
        "train" => Ok(SelectionMode::TrainingLoss),
        other => bail!("unknown selection mode {other:?}, expected val or train"),
    }
}
