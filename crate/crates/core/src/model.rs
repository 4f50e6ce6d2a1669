//! The learnable parameter set `Ω = {F, E_ag, E_ap, A, M, H}`.
//!
//! `F` is a backbone followed by a linear projection to `feature_dim`; the
//! first half of the projected feature is the causal part `f_c`, the second
//! half the non-causal part `f_b`. A single classifier `H` serves `f_c`,
//! `f_b` and the reduced intervened features `M(f_c ⊕ f_b)`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneKind};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{CallTrace, Component, Dense, DenseInit, ParamStore, TraceSnapshot};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Length `d` of the full feature; each half has `d/2` entries.
    pub feature_dim: usize,
    /// Width of `μ` and of `log σ²`.
    pub z_dim: usize,
    pub encoder_hidden: usize,
    pub augmentor_hidden: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub precision: Precision,
    /// Per-channel normalization applied when images enter the backbone.
    pub input_mean: Vec<f32>,
    pub input_std: Vec<f32>,
    /// Optional safetensors file holding `F.backbone.*` weights.
    pub pretrained: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::TinyCnn,
            feature_dim: 64,
            z_dim: 16,
            encoder_hidden: 64,
            augmentor_hidden: 64,
            num_classes: 4,
            image_size: 32,
            channels: 3,
            precision: Precision::F32,
            input_mean: vec![0.5; 3],
            input_std: vec![0.5; 3],
            pretrained: None,
        }
    }
}

impl ModelConfig {
    pub fn half_dim(&self) -> usize {
        self.feature_dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.feature_dim % 2 != 0 {
            return Err(Error::Config(format!("feature_dim must be positive and even, got {}", self.feature_dim)));
        }
        for (name, v) in [
            ("z_dim", self.z_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("augmentor_hidden", self.augmentor_hidden),
            ("image_size", self.image_size),
            ("channels", self.channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.input_mean.len() != self.channels || self.input_std.len() != self.channels {
            return Err(Error::Config("input_mean/input_std need one entry per channel".into()));
        }
        if self.input_std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("input_std entries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderId {
    /// Anchor → transformed anchor.
    Ag,
    /// Anchor → same-class positive.
    Ap,
}

/// Gaussian parameters of a feature-level transformation distribution,
/// one row per input pair.
#[derive(Debug, Clone)]
pub struct MetaKnowledge {
    pub mu: Tensor,
    pub log_var: Tensor,
}

/// A batch of extracted features, `(n, d)`.
#[derive(Debug, Clone)]
pub struct Features {
    full: Tensor,
    half: usize,
}

impl Features {
    pub fn full(&self) -> &Tensor {
        &self.full
    }

    pub fn causal(&self) -> Result<Tensor> {
        Ok(self.full.narrow(1, 0, self.half)?)
    }

    pub fn noncausal(&self) -> Result<Tensor> {
        Ok(self.full.narrow(1, self.half, self.half)?)
    }

    pub fn len(&self) -> usize {
        self.full.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> Result<Vec<FeaturePair>> {
        let rows: Vec<Vec<f64>> = self.full.to_dtype(DType::F64)?.to_vec2()?;
        Ok(rows
            .into_iter()
            .map(|mut r| {
                let f_b = r.split_off(self.half);
                FeaturePair { f_c: r, f_b }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub f_c: Vec<f64>,
    pub f_b: Vec<f64>,
}

impl FeaturePair {
    pub fn concat(&self) -> Vec<f64> {
        self.f_c.iter().chain(&self.f_b).copied().collect()
    }
}

/// Two-layer MLP producing `(μ, log σ²)`. The output layer starts at zero,
/// so every encoder emits a unit Gaussian before training.
#[derive(Debug, Clone)]
pub struct Encoder {
    hidden: Dense,
    out: Dense,
    z_dim: usize,
}

impl Encoder {
    fn forward(&self, x: &Tensor) -> Result<MetaKnowledge> {
        let h = self.hidden.forward(x)?.relu()?;
        let o = self.out.forward(&h)?;
        Ok(MetaKnowledge { mu: o.narrow(1, 0, self.z_dim)?, log_var: o.narrow(1, self.z_dim, self.z_dim)? })
    }
}

/// Shared augmentor `A: (f_t ⊕ z) → f̂_t`.
#[derive(Debug, Clone)]
pub struct Augmentor {
    hidden: Dense,
    out: Dense,
}

impl Augmentor {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.relu()?)
    }
}

pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    backbone: Backbone,
    proj: Dense,
    head: Dense,
    reduce: Dense,
    enc_ag: Encoder,
    enc_ap: Encoder,
    augmentor: Augmentor,
    trace: Arc<CallTrace>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("cfg", &self.cfg).field("params", &self.params.num_params()).finish()
    }
}

impl Model {
    /// Builds and initializes every component from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let trace = Arc::new(CallTrace::default());
        let mut ps = ParamStore::new(cfg.precision.dtype());
        let mut rng = stream(seed, Purpose::Init, 0);
        let (d, h, z) = (cfg.feature_dim, cfg.half_dim(), cfg.z_dim);
        let t = || trace.clone();

        let backbone = Backbone::new(cfg.backbone, cfg.channels, &mut ps, &mut rng, &trace)?;
        let proj = Dense::new(&mut ps, "F.proj", cfg.backbone.output_dim(), d, DenseInit::Default, &mut rng, Component::Projection, t())?;
        let head = Dense::new(&mut ps, "H", h, cfg.num_classes, DenseInit::Default, &mut rng, Component::Classifier, t())?;
        let reduce = Dense::new(&mut ps, "M", d, h, DenseInit::Default, &mut rng, Component::Reduction, t())?;
        let mut encoder = |name: &str, c: Component| -> Result<Encoder> {
            Ok(Encoder {
                hidden: Dense::new(&mut ps, &format!("{name}.hidden"), d, cfg.encoder_hidden, DenseInit::He, &mut rng, c, t())?,
                out: Dense::new(&mut ps, &format!("{name}.out"), cfg.encoder_hidden, 2 * z, DenseInit::Zeros, &mut rng, c, t())?,
                z_dim: z,
            })
        };
        let enc_ag = encoder("E_ag", Component::EncoderAg)?;
        let enc_ap = encoder("E_ap", Component::EncoderAp)?;
        let augmentor = Augmentor {
            hidden: Dense::new(&mut ps, "A.hidden", h + z, cfg.augmentor_hidden, DenseInit::He, &mut rng, Component::Augmentor, t())?,
            out: Dense::new(&mut ps, "A.out", cfg.augmentor_hidden, h, DenseInit::Default, &mut rng, Component::Augmentor, t())?,
        };
        let model = Self { cfg, params: ps, backbone, proj, head, reduce, enc_ag, enc_ap, augmentor, trace };
        if let Some(path) = model.cfg.pretrained.clone() {
            crate::checkpoint::load_pretrained_backbone(&model, &path)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn trace(&self) -> TraceSnapshot {
        self.trace.snapshot()
    }

    pub fn reset_trace(&self) {
        self.trace.reset();
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn reduction(&self) -> &Dense {
        &self.reduce
    }

    /// Stacks and normalizes images into an NHWC tensor.
    pub fn images_to_tensor<'a>(&self, images: impl IntoIterator<Item = &'a ImageTensor>) -> Result<Tensor> {
        let (s, c) = (self.cfg.image_size, self.cfg.channels);
        let mut data = Vec::new();
        let mut n = 0;
        for img in images {
            if img.shape() != (s, s, c) {
                return Err(Error::Argument(format!(
                    "image of shape {:?} does not match the model input {s}x{s}x{c}",
                    img.shape()
                )));
            }
            data.extend(
                img.data().iter().enumerate().map(|(i, v)| (v - self.cfg.input_mean[i % c]) / self.cfg.input_std[i % c]),
            );
            n += 1;
        }
        Ok(Tensor::from_vec(data, (n, s, s, c), self.device())?.to_dtype(self.dtype())?)
    }

    /// `f_c, f_b = F(x)` for an NHWC batch.
    pub fn extract(&self, x: &Tensor, train: bool) -> Result<Features> {
        let (_, hh, ww, cc) = x.dims4()?;
        if (hh, ww, cc) != (self.cfg.image_size, self.cfg.image_size, self.cfg.channels) {
            return Err(Error::Argument(format!(
                "batch of {hh}x{ww}x{cc} images does not match the model input {0}x{0}x{1}",
                self.cfg.image_size, self.cfg.channels
            )));
        }
        let pooled = self.backbone.forward(x, train)?;
        Ok(Features { full: self.proj.forward(&pooled)?, half: self.cfg.half_dim() })
    }

    pub fn extract_images(&self, images: &[ImageTensor], train: bool) -> Result<Features> {
        let x = self.images_to_tensor(images)?;
        self.extract(&x, train)
    }

    fn check_half(&self, t: &Tensor, what: &str) -> Result<usize> {
        let (n, len) = t.dims2()?;
        if len != self.cfg.half_dim() {
            return Err(Error::Argument(format!("{what} has length {len}, expected {}", self.cfg.half_dim())));
        }
        Ok(n)
    }

    /// `μ, σ² = E(f_t^a ⊕ f_t^other)`, concatenated in that order.
    pub fn encode_meta(&self, id: EncoderId, anchor: &Tensor, other: &Tensor) -> Result<MetaKnowledge> {
        let n = self.check_half(anchor, "anchor feature")?;
        if self.check_half(other, "paired feature")? != n {
            return Err(Error::Argument("anchor and paired feature batches differ in size".into()));
        }
        let x = Tensor::cat(&[anchor, other], 1)?;
        match id {
            EncoderId::Ag => self.enc_ag.forward(&x),
            EncoderId::Ap => self.enc_ap.forward(&x),
        }
    }

    /// `f̂ = A(f_t^a ⊕ z)`.
    pub fn augment(&self, anchor: &Tensor, z: &Tensor) -> Result<Tensor> {
        let n = self.check_half(anchor, "anchor feature")?;
        let (nz, zd) = z.dims2()?;
        if zd != self.cfg.z_dim || nz != n {
            return Err(Error::Argument(format!("z has shape ({nz}, {zd}), expected ({n}, {})", self.cfg.z_dim)));
        }
        self.augmentor.forward(&Tensor::cat(&[anchor, z], 1)?)
    }

    /// Class logits `H(f)` for half-length features.
    pub fn classify_logits(&self, f: &Tensor) -> Result<Tensor> {
        self.check_half(f, "feature")?;
        self.head.forward(f)
    }

    /// Logits `H(M(f_c ⊕ f_b))`.
    pub fn intervene_logits(&self, f_c: &Tensor, f_b: &Tensor) -> Result<Tensor> {
        let n = self.check_half(f_c, "causal feature")?;
        if self.check_half(f_b, "non-causal feature")? != n {
            return Err(Error::Argument("causal and non-causal batches differ in size".into()));
        }
        self.head.forward(&self.reduce.forward(&Tensor::cat(&[f_c, f_b], 1)?)?)
    }

    /// Class probabilities of the intervened features.
    pub fn intervene_classify(&self, f_c: &Tensor, f_b: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.intervene_logits(f_c, f_b)?, D::Minus1)?)
    }

    /// Class probabilities `H(f_c)` in evaluation mode.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.extract(x, false)?;
        Ok(candle_nn::ops::softmax(&self.head.forward(&f.causal()?)?, D::Minus1)?)
    }

    /// `argmax H(f_c)`; touches only `F` and `H`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let f = self.extract(x, false)?;
        let logits = self.head.forward(&f.causal()?)?;
        Ok(logits.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect())
    }

    pub fn predict_images(&self, images: &[ImageTensor]) -> Result<Vec<usize>> {
        self.predict(&self.images_to_tensor(images)?)
    }

    /// Parameters plus batch-norm running statistics, keyed by name.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> =
            self.params.vars().iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect();
        out.extend(self.backbone.buffers());
        out
    }

    /// Overwrites parameters and buffers. Every key of the model must be present.
    pub fn load_state(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.params.vars() {
            let t = tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype())?)?;
        }
        self.backbone.load_buffers(tensors)
    }

    /// Loads only the keys present in `tensors` that start with `prefix`.
    pub(crate) fn load_prefixed(&self, tensors: &BTreeMap<String, Tensor>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.params.vars().iter().filter(|(k, _)| k.starts_with(prefix)) {
            let t = tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}, expected {:?}", t.dims(), var.dims())));
            }
            var.set(&t.to_dtype(self.dtype())?)?;
            n += 1;
        }
        self.backbone.load_buffers(tensors).ok();
        Ok(n)
    }
}

/// `z = μ + ε ⊙ exp(½ log σ²)`.
pub fn reparameterize(mk: &MetaKnowledge, eps: &Tensor) -> Result<Tensor> {
    if eps.dims() != mk.mu.dims() {
        return Err(Error::Argument(format!("eps has shape {:?}, expected {:?}", eps.dims(), mk.mu.dims())));
    }
    Ok((&mk.mu + eps.mul(&(&mk.log_var * 0.5)?.exp()?)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Component;
    use candle_core::Var;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            z_dim: 4,
            encoder_hidden: 6,
            augmentor_hidden: 6,
            num_classes: 3,
            image_size: 8,
            precision: Precision::F64,
            ..Default::default()
        }
    }

    fn batch(model: &Model, n: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::seeded(seed);
        let s = model.config().image_size;
        let imgs: Vec<ImageTensor> = (0..n)
            .map(|_| ImageTensor::new(s, s, 3, (0..s * s * 3).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect();
        model.images_to_tensor(&imgs).unwrap()
    }

    fn randn(shape: (usize, usize), seed: u64) -> Tensor {
        let mut rng = crate::rng::seeded(seed);
        let v: Vec<f64> = (0..shape.0 * shape.1).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn extract_splits_into_halves_that_reassemble() {
        let model = Model::new(tiny_cfg(), 0).unwrap();
        let x = batch(&model, 5, 1);
        let f = model.extract(&x, false).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(f.causal().unwrap().dims(), &[5, 4]);
        assert_eq!(f.noncausal().unwrap().dims(), &[5, 4]);
        let full: Vec<Vec<f64>> = f.full().to_vec2().unwrap();
        for (pair, row) in f.pairs().unwrap().iter().zip(&full) {
            assert_eq!(&pair.concat(), row);
        }
        let again = model.extract(&x, false).unwrap();
        assert_eq!(full, again.full().to_vec2::<f64>().unwrap());
    }

    #[test]
    fn pacs_sized_features_split_to_512() {
        let cfg = ModelConfig { feature_dim: 1024, z_dim: 512, encoder_hidden: 512, augmentor_hidden: 1024, ..tiny_cfg() };
        let model = Model::new(cfg, 0).unwrap();
        let f = model.extract(&batch(&model, 2, 0), false).unwrap();
        assert_eq!(f.causal().unwrap().dims(), &[2, 512]);
        let w = model.params().get("E_ag.hidden.weight").unwrap();
        assert_eq!(w.dims(), &[512, 1024]);
    }

    #[test]
    fn extract_rejects_wrong_image_size() {
        let model = Model::new(tiny_cfg(), 0).unwrap();
        let x = Tensor::zeros((1, 9, 9, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(model.extract(&x, false), Err(Error::Argument(_))));
    }

    #[test]
    fn encoders_start_as_unit_gaussians_and_are_order_sensitive() {
        let model = Model::new(tiny_cfg(), 0).unwrap();
        let (a, o) = (randn((3, 4), 1), randn((3, 4), 2));
        let mk = model.encode_meta(EncoderId::Ag, &a, &o).unwrap();
        assert!(mk.mu.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
        assert!(mk.log_var.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(mk.mu.dims(), &[3, 4]);

        // randomize the output layer, then swapping the inputs changes the result
        for name in ["E_ag.out.weight", "E_ag.out.bias"] {
            let v = model.params().get(name).unwrap();
            let dims = v.dims().to_vec();
            let n: usize = dims.iter().product();
            let r = randn((n, 1), 7).reshape(dims).unwrap();
            v.set(&r).unwrap();
        }
        let fwd = model.encode_meta(EncoderId::Ag, &a, &o).unwrap().mu.to_vec2::<f64>().unwrap();
        let swp = model.encode_meta(EncoderId::Ag, &o, &a).unwrap().mu.to_vec2::<f64>().unwrap();
        assert_ne!(fwd, swp);
        assert!(model.encode_meta(EncoderId::Ap, &a, &randn((3, 5), 0)).is_err());
    }

    #[test]
    fn reparameterize_edge_cases() {
        let mu = randn((2, 4), 3);
        let lv = randn((2, 4), 4);
        let mk = MetaKnowledge { mu: mu.clone(), log_var: lv };
        let z = reparameterize(&mk, &mu.zeros_like().unwrap()).unwrap();
        assert_eq!(z.to_vec2::<f64>().unwrap(), mu.to_vec2::<f64>().unwrap());

        let unit = MetaKnowledge { mu: mu.zeros_like().unwrap(), log_var: mu.zeros_like().unwrap() };
        let e = randn((2, 4), 5);
        assert_eq!(reparameterize(&unit, &e).unwrap().to_vec2::<f64>().unwrap(), e.to_vec2::<f64>().unwrap());
        assert!(reparameterize(&unit, &randn((2, 3), 0)).is_err());
    }

    #[test]
    fn reparameterized_samples_have_mean_mu() {
        let n = 100_000;
        let mu = [0.5f64, -1.0, 2.0];
        let lv = [0.0f64, 1.0, -2.0];
        let mk = MetaKnowledge {
            mu: Tensor::new(&mu, &Device::Cpu).unwrap().unsqueeze(0).unwrap().repeat((n, 1)).unwrap(),
            log_var: Tensor::new(&lv, &Device::Cpu).unwrap().unsqueeze(0).unwrap().repeat((n, 1)).unwrap(),
        };
        let z = reparameterize(&mk, &randn((n, 3), 11)).unwrap();
        let mean: Vec<f64> = z.mean(0).unwrap().to_vec1().unwrap();
        for j in 0..3 {
            let sigma = (0.5 * lv[j]).exp();
            assert!((mean[j] - mu[j]).abs() < 3.0 * sigma / (n as f64).sqrt(), "{j}: {}", mean[j]);
        }
    }

    #[test]
    fn augment_shapes_determinism_and_z_gradient() {
        let model = Model::new(tiny_cfg(), 3).unwrap();
        let a = randn((2, 4), 1);
        let z0: Vec<f64> = randn((2, 4), 2).flatten_all().unwrap().to_vec1().unwrap();
        let zv = Var::from_tensor(&Tensor::from_vec(z0.clone(), (2, 4), &Device::Cpu).unwrap()).unwrap();
        let out = model.augment(&a, zv.as_tensor()).unwrap();
        assert_eq!(out.dims(), &[2, 4]);
        let again = model.augment(&a, zv.as_tensor()).unwrap();
        assert_eq!(out.to_vec2::<f64>().unwrap(), again.to_vec2::<f64>().unwrap());

        // weighted sum of outputs, analytic vs central differences in z
        let w = randn((2, 4), 9);
        let f = |z: &Tensor| model.augment(&a, z).unwrap().mul(&w).unwrap().sum_all().unwrap();
        let grads = f(zv.as_tensor()).backward().unwrap();
        let g: Vec<f64> = grads.get(zv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(g.iter().any(|v| v.abs() > 1e-8));
        let h = 1e-6;
        for i in 0..8 {
            let mut p = z0.clone();
            p[i] += h;
            let mut m = z0.clone();
            m[i] -= h;
            let ev = |v: Vec<f64>| f(&Tensor::from_vec(v, (2, 4), &Device::Cpu).unwrap()).to_scalar::<f64>().unwrap();
            let num = (ev(p) - ev(m)) / (2.0 * h);
            let denom = num.abs().max(g[i].abs()).max(1e-6);
            assert!((num - g[i]).abs() / denom < 1e-3, "{i}: {num} vs {}", g[i]);
        }
        assert!(model.augment(&randn((2, 3), 0), zv.as_tensor()).is_err());
    }

    #[test]
    fn intervention_outputs_a_distribution_sensitive_to_f_b() {
        let model = Model::new(tiny_cfg(), 5).unwrap();
        let fc = randn((3, 4), 1);
        let p = model.intervene_classify(&fc, &randn((3, 4), 2)).unwrap();
        assert_eq!(p.dims(), &[3, 3]);
        for row in p.to_vec2::<f64>().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        let q = model.intervene_classify(&fc, &randn((3, 4), 3)).unwrap();
        assert_ne!(p.to_vec2::<f64>().unwrap(), q.to_vec2::<f64>().unwrap());
        assert!(model.intervene_classify(&fc, &randn((3, 5), 3)).is_err());
    }

    #[test]
    fn predict_uses_only_the_feature_extractor_and_classifier() {
        let model = Model::new(tiny_cfg(), 0).unwrap();
        let x = batch(&model, 6, 2);
        model.reset_trace();
        let pred = model.predict(&x).unwrap();
        let snap = model.trace();
        assert_eq!(pred.len(), 6);
        assert!(pred.iter().all(|p| *p < 3));
        assert_eq!(snap.touched(), vec![Component::Backbone, Component::Projection, Component::Classifier]);
        for c in [Component::EncoderAg, Component::EncoderAp, Component::Augmentor, Component::Reduction] {
            assert_eq!(snap.macs[&c], 0);
        }
        let proba: Vec<Vec<f64>> = model.predict_proba(&x).unwrap().to_vec2().unwrap();
        for (row, p) in proba.iter().zip(&pred) {
            let arg = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(arg, *p);
        }
    }

    #[test]
    fn state_round_trip_restores_outputs() {
        let a = Model::new(tiny_cfg(), 1).unwrap();
        let b = Model::new(tiny_cfg(), 2).unwrap();
        let x = batch(&a, 3, 0);
        assert_ne!(
            a.extract(&x, false).unwrap().full().to_vec2::<f64>().unwrap(),
            b.extract(&x, false).unwrap().full().to_vec2::<f64>().unwrap()
        );
        b.load_state(&a.state_tensors()).unwrap();
        assert_eq!(
            a.extract(&x, false).unwrap().full().to_vec2::<f64>().unwrap(),
            b.extract(&x, false).unwrap().full().to_vec2::<f64>().unwrap()
        );
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { feature_dim: 7, ..tiny_cfg() }.validate().is_err());
        assert!(ModelConfig { z_dim: 0, ..tiny_cfg() }.validate().is_err());
        assert!(ModelConfig { num_classes: 1, ..tiny_cfg() }.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
    }
}
