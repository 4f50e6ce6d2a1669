//! Training configuration, named profiles and TOML loading.
//!
//! A config file may name a `profile`; its keys then override the profile
//! value by value (nested tables merge recursively). `CLFA_SEED` in the
//! environment overrides `seed` after the file is applied.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Precision};
use crate::objectives::{InterventionScope, LossWeights, Pairing};
use crate::optim::AdamConfig;
use crate::transforms::{DatasetTag, Strategy, TransformBank};

pub const SEED_ENV: &str = "CLFA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Objective weights plus the number of latent samples per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub delta: f64,
    /// `λ`: latent augmentations drawn per branch and per anchor.
    pub lambda_samples: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self { alpha1: w.alpha1, alpha2: w.alpha2, alpha3: w.alpha3, delta: w.delta, lambda_samples: 5 }
    }
}

impl WeightsConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha1: self.alpha1, alpha2: self.alpha2, alpha3: self.alpha3, delta: self.delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeOverride {
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformsConfig {
    /// `false` leaves the generated image equal to the anchor.
    pub apply: bool,
    /// Enabled strategy names; all sixteen when absent.
    pub enabled: Option<Vec<String>>,
    pub composition_depth: usize,
    /// Per-strategy magnitude overrides, `transforms.<name>.range = [lo, hi]`.
    #[serde(flatten)]
    pub ranges: BTreeMap<String, RangeOverride>,
}

impl Default for TransformsConfig {
    fn default() -> Self {
        Self { apply: true, enabled: None, composition_depth: 1, ranges: BTreeMap::new() }
    }
}

impl TransformsConfig {
    /// The configured bank, or `None` when transforms are switched off.
    pub fn bank(&self) -> Result<Option<TransformBank>> {
        if !self.apply {
            return Ok(None);
        }
        let mut bank = TransformBank::standard();
        if let Some(names) = &self.enabled {
            let parsed = names.iter().map(|n| Strategy::from_str(n)).collect::<Result<Vec<_>>>()?;
            if parsed.is_empty() {
                return Err(Error::Config("transforms.enabled is empty".into()));
            }
            bank = bank.with_enabled(parsed);
        }
        for (name, o) in &self.ranges {
            bank = bank.with_range(Strategy::from_str(name)?, o.range[0], o.range[1])?;
        }
        Ok(Some(bank))
    }

    pub fn with_enabled(mut self, names: &[Strategy]) -> Self {
        self.enabled = Some(names.iter().map(|s| s.name().to_string()).collect());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub pairing: PairingMode,
    /// Partners drawn per causal vector in shuffled mode.
    pub per_causal: usize,
    pub scope: InterventionScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    #[default]
    Shuffled,
    FullProduct,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self { pairing: PairingMode::Shuffled, per_causal: 1, scope: InterventionScope::Batch }
    }
}

impl InterventionConfig {
    pub fn pairing(&self) -> Pairing {
        match self.pairing {
            PairingMode::Shuffled => Pairing::Shuffled { per_causal: self.per_causal },
            PairingMode::FullProduct => Pairing::FullProduct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Option<String>,
    pub seed: u64,
    pub dataset_tag: DatasetTag,
    pub max_iters: usize,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub optimizer: OptimizerKind,
    pub triples_per_class: usize,
    /// Latent augmentation branch on or off; off leaves only `L_cls` and `L_ind`
    /// over the initial triples.
    pub latent_aug: bool,
    pub eval_every: usize,
    /// Stop after this many evaluations without validation improvement.
    pub patience: Option<usize>,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub log_provenance: bool,
    pub weights: WeightsConfig,
    pub intervention: InterventionConfig,
    pub adam: AdamConfig,
    pub transforms: TransformsConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: None,
            seed: 0,
            dataset_tag: DatasetTag::Synthetic,
            max_iters: 40_000,
            base_lr: 1e-3,
            lr_halving_period: 10_000,
            optimizer: OptimizerKind::Adam,
            triples_per_class: 4,
            latent_aug: true,
            eval_every: 0,
            patience: None,
            checkpoint_every: 0,
            log_every: 1,
            log_provenance: false,
            weights: WeightsConfig::default(),
            intervention: InterventionConfig::default(),
            adam: AdamConfig::default(),
            transforms: TransformsConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

pub const PROFILES: [&str; 4] = ["pacs", "digits", "cifar10", "synthetic"];

impl TrainConfig {
    /// Built-in profile by name.
    pub fn profile(name: &str) -> Result<Self> {
        let base = TrainConfig { profile: Some(name.to_string()), ..Default::default() };
        let imagenet = |m: ModelConfig| ModelConfig {
            input_mean: vec![0.485, 0.456, 0.406],
            input_std: vec![0.229, 0.224, 0.225],
            ..m
        };
        Ok(match name {
            "pacs" => TrainConfig {
                dataset_tag: DatasetTag::Pacs,
                base_lr: 1e-4,
                triples_per_class: 4,
                weights: WeightsConfig { lambda_samples: 15, ..Default::default() },
                model: imagenet(ModelConfig {
                    backbone: BackboneKind::Resnet18,
                    feature_dim: 1024,
                    z_dim: 512,
                    encoder_hidden: 512,
                    augmentor_hidden: 1024,
                    num_classes: 7,
                    image_size: 224,
                    ..Default::default()
                }),
                checkpoint_every: 5000,
                eval_every: 1000,
                log_every: 100,
                ..base
            },
            "digits" => TrainConfig {
                dataset_tag: DatasetTag::Digits,
                base_lr: 1e-3,
                triples_per_class: 8,
                weights: WeightsConfig { lambda_samples: 25, ..Default::default() },
                model: ModelConfig {
                    backbone: BackboneKind::Convnet,
                    feature_dim: 1024,
                    z_dim: 64,
                    encoder_hidden: 64,
                    augmentor_hidden: 512,
                    num_classes: 10,
                    image_size: 32,
                    ..Default::default()
                },
                checkpoint_every: 5000,
                eval_every: 1000,
                log_every: 100,
                ..base
            },
            "cifar10" => TrainConfig {
                dataset_tag: DatasetTag::Cifar10,
                base_lr: 1e-3,
                triples_per_class: 8,
                weights: WeightsConfig { lambda_samples: 25, ..Default::default() },
                model: ModelConfig {
                    backbone: BackboneKind::Wrn16_4,
                    feature_dim: 1024,
                    z_dim: 128,
                    encoder_hidden: 128,
                    augmentor_hidden: 128,
                    num_classes: 10,
                    image_size: 32,
                    input_mean: vec![0.4914, 0.4822, 0.4465],
                    input_std: vec![0.2470, 0.2435, 0.2616],
                    ..Default::default()
                },
                checkpoint_every: 5000,
                eval_every: 1000,
                log_every: 100,
                ..base
            },
            "synthetic" => TrainConfig {
                dataset_tag: DatasetTag::Synthetic,
                max_iters: 3000,
                base_lr: 1e-3,
                lr_halving_period: 1000,
                triples_per_class: 4,
                weights: WeightsConfig { lambda_samples: 5, ..Default::default() },
                model: ModelConfig {
                    backbone: BackboneKind::TinyCnn,
                    feature_dim: 64,
                    z_dim: 16,
                    encoder_hidden: 64,
                    augmentor_hidden: 64,
                    num_classes: 4,
                    image_size: 32,
                    precision: Precision::F32,
                    ..Default::default()
                },
                checkpoint_every: 1000,
                log_every: 10,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown profile `{other}`; expected one of {}",
                    PROFILES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::Config("lr_halving_period must be positive".into()));
        }
        if self.triples_per_class == 0 {
            return Err(Error::Config("triples_per_class must be positive".into()));
        }
        if self.weights.lambda_samples == 0 {
            return Err(Error::Config("weights.lambda_samples must be at least 1".into()));
        }
        if self.weights.delta <= 0.0 {
            return Err(Error::Config(format!("weights.delta must be positive, got {}", self.weights.delta)));
        }
        if self.transforms.composition_depth == 0 {
            return Err(Error::Config("transforms.composition_depth must be at least 1".into()));
        }
        if self.intervention.per_causal == 0 {
            return Err(Error::Config("intervention.per_causal must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if let Some(c) = self.adam.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config(format!("adam.clip_norm must be positive, got {c}")));
            }
        }
        self.weights.loss_weights().validate()?;
        self.model.validate()?;
        self.transforms.bank()?;
        Ok(())
    }

    /// Parses a TOML document, applying it over the named profile if any.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = match doc.get("profile") {
            Some(toml::Value::String(name)) => to_table(&Self::profile(name)?)?,
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
            None => to_table(&Self::default())?,
        };
        merge(&mut merged, doc);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the `CLFA_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn to_table(cfg: &TrainConfig) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
