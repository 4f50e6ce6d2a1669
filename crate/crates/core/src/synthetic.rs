//! Controllable-factor dataset: the label is the drawn shape, the shape's
//! colour is a non-causal factor tied to the label with a tunable
//! probability, and the background texture is independent noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const SHAPES: [&str; 6] = ["square", "circle", "triangle", "cross", "diamond", "ring"];

pub const PALETTE: [[f32; 3]; 6] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.30, 0.95],
    [0.95, 0.85, 0.15],
    [0.85, 0.20, 0.85],
    [0.15, 0.85, 0.85],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticFactorSpec {
    pub num_classes: usize,
    /// Probability that a training image uses its class colour.
    pub train_correlation: f64,
    /// Same probability for the test split.
    pub test_correlation: f64,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticFactorSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_correlation: 0.95,
            test_correlation: 0.25,
            image_size: 32,
            train_per_class: 250,
            test_per_class: 250,
            seed: 0,
        }
    }
}

impl SyntheticFactorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > SHAPES.len() {
            return Err(Error::Config(format!(
                "synthetic num_classes must be in [2, {}], got {}",
                SHAPES.len(),
                self.num_classes
            )));
        }
        for (name, p) in [("train_correlation", self.train_correlation), ("test_correlation", self.test_correlation)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be a probability, got {p}")));
            }
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("synthetic image_size must be at least 8, got {}", self.image_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticSplit {
    Train,
    Test,
}

/// Latent factors of one rendered image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factors {
    pub shape: usize,
    pub color: usize,
    pub texture: usize,
}

/// Renders `n_per_class` images per class and returns the factors alongside.
pub fn generate_synthetic_with_factors<R: Rng + ?Sized>(
    spec: &SyntheticFactorSpec,
    n_per_class: usize,
    split: SyntheticSplit,
    rng: &mut R,
) -> Result<(Dataset, Vec<Factors>)> {
    spec.validate()?;
    let k = spec.num_classes;
    let corr = match split {
        SyntheticSplit::Train => spec.train_correlation,
        SyntheticSplit::Test => spec.test_correlation,
    };
    let tag = match split {
        SyntheticSplit::Train => "train",
        SyntheticSplit::Test => "test",
    };
    let mut samples = Vec::with_capacity(k * n_per_class);
    let mut factors = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        for i in 0..n_per_class {
            let color = if rng.random::<f64>() < corr {
                class
            } else {
                let j = rng.random_range(0..k - 1);
                if j >= class { j + 1 } else { j }
            };
            let f = Factors { shape: class, color, texture: rng.random_range(0..3) };
            let image = render(spec.image_size, f, rng);
            samples.push(LabeledSample { image, label: class, sample_id: format!("{tag}-{class}-{i:05}") });
            factors.push(f);
        }
    }
    let names = SHAPES[..k].iter().map(|s| s.to_string()).collect();
    Ok((Dataset::new(names, samples, format!("synthetic-{tag}"))?, factors))
}

pub fn generate_synthetic<R: Rng + ?Sized>(
    spec: &SyntheticFactorSpec,
    n_per_class: usize,
    split: SyntheticSplit,
    rng: &mut R,
) -> Result<Dataset> {
    generate_synthetic_with_factors(spec, n_per_class, split, rng).map(|(ds, _)| ds)
}

fn render<R: Rng + ?Sized>(size: usize, f: Factors, rng: &mut R) -> ImageTensor {
    let s = size as f32;
    let mut data = vec![0f32; size * size * 3];

    // grayscale background: flat, noise or stripes
    let level: f32 = rng.random_range(0.05..0.45);
    let period = rng.random_range(3..7);
    for y in 0..size {
        for x in 0..size {
            let v = match f.texture {
                0 => level,
                1 => level + rng.random_range(-0.08..0.08),
                _ => level + if (x + y) / period % 2 == 0 { 0.1 } else { -0.1 },
            };
            data[(y * size + x) * 3..(y * size + x) * 3 + 3].fill(v);
        }
    }

    let radius = s * rng.random_range(0.22f32..0.34);
    let margin = radius + 1.0;
    let cx = rng.random_range(margin..s - margin);
    let cy = rng.random_range(margin..s - margin);
    let mut color = PALETTE[f.color];
    for c in &mut color {
        *c += rng.random_range(-0.08..0.08);
    }
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            if inside(f.shape, dx / radius, dy / radius) {
                data[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    ImageTensor::from_clamped(size, size, 3, data)
}

/// Membership test in unit coordinates (radius 1).
fn inside(shape: usize, u: f32, v: f32) -> bool {
    match shape {
        0 => u.abs() <= 0.8 && v.abs() <= 0.8,
        1 => u * u + v * v <= 1.0,
        // upward triangle: apex at v=-1, base at v=0.8
        2 => v <= 0.8 && v >= -1.0 && u.abs() <= (v + 1.0) / 1.8,
        3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        4 => u.abs() + v.abs() <= 1.0,
        _ => {
            let r2 = u * u + v * v;
            (0.45..=1.0).contains(&r2)
        }
    }
}
