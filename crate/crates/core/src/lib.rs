//! Single-source domain generalization by splitting features into causal and
//! non-causal halves and augmenting them in feature space.
//!
//! A backbone produces a feature whose halves are treated as causal (`f_c`)
//! and non-causal (`f_b`). Two encoders learn Gaussian distributions over
//! feature-level transformations from (anchor, transformed anchor) and
//! (anchor, same-class positive) pairs; a shared augmentor turns samples from
//! them into augmented features. Training combines classification,
//! independence, augmentation and intervention terms. Inference uses only
//! the backbone, the projection and the classifier on `f_c`.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod export;
pub mod image;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod probe;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod transforms;

pub use backbone::BackboneKind;
pub use config::TrainConfig;
pub use data::{load_folder_dataset, sample_triple_batch, Dataset, LabeledSample, LoadOptions, Split, Triple, TripleSampler};
pub use error::{Error, Result};
pub use eval::{accuracy, evaluate, MetricsRecord, Protocol};
pub use export::export_embeddings;
pub use image::ImageTensor;
pub use model::{reparameterize, EncoderId, FeaturePair, MetaKnowledge, Model, ModelConfig, Precision};
pub use objectives::{total_loss, InterventionScope, LossBundle, LossWeights, Pairing};
pub use probe::{linear_probe, ProbeReport, ProbeTarget};
pub use report::{write_report, ReportOptions, StdMode};
pub use rng::{seeded, SeededRandomSource};
pub use synthetic::{generate_synthetic, SyntheticFactorSpec, SyntheticSplit};
pub use trainer::{fit, lr_at, Trainer};
pub use transforms::{apply_transform, compose, DatasetTag, Strategy, TransformBank, TransformSpec};
