//! Controlled-shift study on the synthetic dataset.
//!
//! Three arms share the backbone, data and schedule and differ only in which
//! terms train it. The test split decorrelates colour from shape, so accuracy
//! there measures reliance on the causal factor.

use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::accuracy;
use crate::probe::{linear_probe, ProbeTarget};
use crate::report::{mean_std, StdMode};
use crate::rng::seeded;
use crate::synthetic::{generate_synthetic, SyntheticFactorSpec, SyntheticSplit};
use crate::trainer::fit;
use crate::transforms::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Every term with the configured weights.
    Full,
    /// Cross-entropy on anchors, positives and transformed anchors only.
    BaselineT,
    /// Cross-entropy on anchors and positives; the third triple slot repeats the anchor.
    Baseline,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::BaselineT, Arm::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::BaselineT => "baseline+T",
            Arm::Baseline => "baseline",
        }
    }

    pub fn configure(self, mut cfg: TrainConfig) -> TrainConfig {
        if self != Arm::Full {
            cfg.latent_aug = false;
            cfg.weights.alpha1 = 0.0;
            cfg.weights.alpha2 = 0.0;
            cfg.weights.alpha3 = 0.0;
        }
        if self == Arm::Baseline {
            cfg.transforms.apply = false;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub shifted_acc: f64,
    pub probe_fc: Option<f64>,
    pub probe_fb: Option<f64>,
}

/// Train and shifted-test splits of the synthetic dataset for `spec`.
pub fn shift_data(spec: &SyntheticFactorSpec) -> Result<(Dataset, Dataset)> {
    let train = generate_synthetic(spec, spec.train_per_class, SyntheticSplit::Train, &mut seeded(spec.seed))?;
    let test = generate_synthetic(spec, spec.test_per_class, SyntheticSplit::Test, &mut seeded(spec.seed ^ 0x7e57))?;
    Ok((train, test))
}

/// Trains one arm for one seed. Probes run only when `probe` is set.
pub fn run_arm(base: &TrainConfig, arm: Arm, seed: u64, train: &Dataset, test: &Dataset, probe: bool) -> Result<ArmResult> {
    let cfg = arm.configure(TrainConfig { seed, ..base.clone() });
    let (trainer, _) = fit(cfg, train, None, None)?;
    let model = trainer.model();
    let shifted_acc = accuracy(model, test)?;
    let (probe_fc, probe_fb) = if probe {
        (
            Some(linear_probe(model, test, ProbeTarget::Fc)?.heldout_acc),
            Some(linear_probe(model, test, ProbeTarget::Fb)?.heldout_acc),
        )
    } else {
        (None, None)
    };
    log::info!("{} seed {seed}: shifted accuracy {shifted_acc:.4}", arm.name());
    Ok(ArmResult { arm, seed, shifted_acc, probe_fc, probe_fb })
}

/// Restricts the transform bank to `strategies`.
pub fn with_strategies(base: &TrainConfig, strategies: &[Strategy]) -> TrainConfig {
    TrainConfig { transforms: base.transforms.clone().with_enabled(strategies), ..base.clone() }
}

/// Sample mean and standard deviation of shifted accuracy for one arm.
pub fn arm_summary(results: &[ArmResult], arm: Arm) -> (f64, f64) {
    let v: Vec<f64> = results.iter().filter(|r| r.arm == arm).map(|r| r.shifted_acc).collect();
    let (m, s) = mean_std(&v, StdMode::Sample);
    (m, s.unwrap_or(0.0))
}
