//! The training loop.
//!
//! Each iteration samples a class-balanced batch of triples, extracts the
//! decoupled features of anchors, positives and generated images, encodes
//! both meta-knowledge branches for `t ∈ {c, b}`, draws `λ` latent
//! augmentations per branch, assembles the four objective terms and takes a
//! single Adam step over every parameter.
//!
//! Every random draw of iteration `i` comes from a stream keyed by
//! `(seed, purpose, i)`, so a run resumed from a checkpoint replays the same
//! draws as an uninterrupted one.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{IndexOp, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::TrainConfig;
use crate::data::{sample_triple_batch, Dataset, Triple, TripleSampler};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::model::{reparameterize, EncoderId, MetaKnowledge, Model};
use crate::nn::Component;
use crate::objectives::{loss_aug, loss_cls, loss_ind, loss_int, select_pairs, total_loss, LossBundle, LossTerms, LossWeights};
use crate::optim::Adam;
use crate::rng::{stream, Purpose};
use crate::transforms::TransformBank;

/// `base_lr · 0.5^⌊iteration / lr_halving_period⌋`.
pub fn lr_at(iteration: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (iteration / cfg.lr_halving_period.max(1)) as i32;
    cfg.base_lr * 0.5f64.powi(halvings)
}

/// Images of one batch stacked as `[anchors; positives; generated]`.
#[derive(Debug, Clone)]
pub struct BatchTensors {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl BatchTensors {
    pub fn from_triples(model: &Model, triples: &[Triple]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::Argument("empty triple batch".into()));
        }
        let images = triples
            .iter()
            .map(|t| &t.anchor.image)
            .chain(triples.iter().map(|t| &t.positive.image))
            .chain(triples.iter().map(|t| &t.generated.image));
        Ok(Self { x: model.images_to_tensor(images)?, labels: triples.iter().map(|t| t.label).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Objective settings used by one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub weights: LossWeights,
    pub lambda: usize,
    pub latent_aug: bool,
}

impl ObjectiveSpec {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self { weights: cfg.weights.loss_weights(), lambda: cfg.weights.lambda_samples, latent_aug: cfg.latent_aug }
    }

    /// Causal (and non-causal) vectors per anchor entering the intervention term.
    pub fn set_size(&self) -> usize {
        if self.latent_aug {
            3 + 2 * self.lambda
        } else {
            3
        }
    }
}

/// The random inputs of one forward pass.
#[derive(Debug, Clone)]
pub struct StepDraws {
    /// `(2, λ, 2, N, z)`: branch (ag, ap), sample, `t` (c, b), anchor.
    pub eps: Option<Tensor>,
    pub pairs: Vec<(usize, usize)>,
}

impl StepDraws {
    pub fn draw(cfg: &TrainConfig, model: &Model, n: usize, iteration: usize) -> Result<Self> {
        let spec = ObjectiveSpec::from_config(cfg);
        let eps = if spec.latent_aug {
            let z = model.config().z_dim;
            let shape = (2, spec.lambda, 2, n, z);
            let mut rng = stream(cfg.seed, Purpose::Noise, iteration as u64);
            let values: Vec<f64> = (0..2 * spec.lambda * 2 * n * z).map(|_| rng.sample(StandardNormal)).collect();
            Some(Tensor::from_vec(values, shape, model.device())?.to_dtype(model.dtype())?)
        } else {
            None
        };
        let groups: Vec<usize> = (0..spec.set_size() * n).map(|r| r % n).collect();
        let pairs = if spec.latent_aug {
            let mut rng = stream(cfg.seed, Purpose::Pairing, iteration as u64);
            select_pairs(&groups, &groups, cfg.intervention.pairing(), cfg.intervention.scope, &mut rng)?
        } else {
            Vec::new()
        };
        Ok(Self { eps, pairs })
    }
}

/// Differentiable terms of one forward pass plus the intervention set sizes.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub terms: LossTerms,
    /// Causal vectors per anchor in the intervention set.
    pub causal_per_anchor: usize,
    /// Non-causal vectors per anchor in the intervention set.
    pub noncausal_per_anchor: usize,
    pub num_pairs: usize,
}

/// Builds all four terms for a batch under fixed random draws.
pub fn forward_losses(model: &Model, batch: &BatchTensors, draws: &StepDraws, spec: &ObjectiveSpec, train: bool) -> Result<ForwardOutput> {
    let n = batch.len();
    let f = model.extract(&batch.x, train)?;
    let (fc, fb) = (f.causal()?, f.noncausal()?);
    let labels3 = batch.labels.repeat(3);
    // three members, each a batch mean
    let cls_init = (loss_cls(model, &fc, &fb, &labels3)? * 3.0)?;
    let ind_init = (loss_ind(&fc, &fb)? * 3.0)?;
    let zero = cls_init.zeros_like()?;
    if !spec.latent_aug {
        return Ok(ForwardOutput {
            terms: LossTerms { cls: cls_init, ind: ind_init, aug: zero.clone(), int: zero },
            causal_per_anchor: 3,
            noncausal_per_anchor: 3,
            num_pairs: 0,
        });
    }
    let eps = draws.eps.as_ref().ok_or_else(|| Error::Argument("latent augmentation needs noise draws".into()))?;
    let (h, z, lambda) = (model.config().half_dim(), model.config().z_dim, spec.lambda);
    if eps.dims() != [2, lambda, 2, n, z] {
        return Err(Error::Argument(format!("noise has shape {:?}, expected {:?}", eps.dims(), [2, lambda, 2, n, z])));
    }
    let part = |t: &Tensor, k: usize| t.narrow(0, k * n, n);
    let (fc_a, fc_p, fc_g) = (part(&fc, 0)?, part(&fc, 1)?, part(&fc, 2)?);
    let (fb_a, fb_p, fb_g) = (part(&fb, 0)?, part(&fb, 1)?, part(&fb, 2)?);
    let anchor = Tensor::cat(&[&fc_a, &fb_a], 0)?;
    let tile = |t: &Tensor, w: usize| -> Result<Tensor> { Ok(t.unsqueeze(0)?.broadcast_as((lambda, 2 * n, w))?.reshape((lambda * 2 * n, w))?) };
    let anchor_tiled = tile(&anchor, h)?;

    let mut hats_c = Vec::with_capacity(2);
    let mut hats_b = Vec::with_capacity(2);
    for (v, (id, oc, ob)) in [(EncoderId::Ag, &fc_g, &fb_g), (EncoderId::Ap, &fc_p, &fb_p)].into_iter().enumerate() {
        // rows: [t = c; t = b], one per anchor
        let other = Tensor::cat(&[oc, ob], 0)?;
        let mk = model.encode_meta(id, &anchor, &other)?;
        let tiled = MetaKnowledge { mu: tile(&mk.mu, z)?, log_var: tile(&mk.log_var, z)? };
        let e = eps.i(v)?.reshape((lambda * 2 * n, z))?;
        let zz = reparameterize(&tiled, &e)?;
        let out = model.augment(&anchor_tiled, &zz)?.reshape((lambda, 2, n, h))?;
        hats_c.push(out.i((.., 0))?);
        hats_b.push(out.i((.., 1))?);
    }
    let hat_c = Tensor::stack(&hats_c, 0)?;
    let hat_b = Tensor::stack(&hats_b, 0)?;
    let aug = loss_aug(&fc_a, &fb_a, &hat_c, &hat_b, spec.weights.delta)?;

    let flat_c = hat_c.reshape((2 * lambda * n, h))?;
    let flat_b = hat_b.reshape((2 * lambda * n, h))?;
    let labels_aug = batch.labels.repeat(2 * lambda);
    // two branches, each averaged over λ
    let cls = (cls_init + (loss_cls(model, &flat_c, &flat_b, &labels_aug)? * 2.0)?)?;
    let ind = (ind_init + (loss_ind(&flat_c, &flat_b)? * 2.0)?)?;

    // every block has N rows in anchor order, so row r belongs to anchor r % N
    let causal = Tensor::cat(&[&fc, &flat_c], 0)?;
    let noncausal = Tensor::cat(&[&fb, &flat_b], 0)?;
    let labels_all = batch.labels.repeat(3 + 2 * lambda);
    let int = loss_int(model, &causal, &noncausal, &labels_all, &draws.pairs)?;
    let per_anchor = causal.dims()[0] / n;
    Ok(ForwardOutput {
        terms: LossTerms { cls, ind, aug, int },
        causal_per_anchor: per_anchor,
        noncausal_per_anchor: noncausal.dims()[0] / n,
        num_pairs: draws.pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Iteration index the step ran at (zero-based).
    pub iteration: usize,
    pub lr: f64,
    pub losses: LossBundle,
    /// Global gradient L2 norm per component.
    pub grad_norms: BTreeMap<Component, f64>,
    pub causal_per_anchor: usize,
    pub noncausal_per_anchor: usize,
    pub num_pairs: usize,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub iter: usize,
    pub cls: f64,
    pub ind: f64,
    pub aug: f64,
    pub int: f64,
    pub total: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ProvenanceLine<'a> {
    iter: usize,
    seed: u64,
    label: usize,
    anchor: &'a str,
    positive: &'a str,
    strategies: &'a [(crate::transforms::Strategy, f64)],
    noise_seed: u64,
}

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration}.safetensors")
}

pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    opt: Adam,
    sampler: TripleSampler,
    iteration: usize,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("iteration", &self.iteration).field("model", &self.model).finish()
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.seed)?;
        Self::with_model(cfg, model)
    }

    fn with_model(cfg: TrainConfig, model: Model) -> Result<Self> {
        let opt = Adam::new(cfg.adam, model.params())?;
        let bank: Option<TransformBank> = cfg.transforms.bank()?;
        let mut sampler = TripleSampler::new(cfg.triples_per_class, cfg.dataset_tag, bank);
        sampler.composition_depth = cfg.transforms.composition_depth;
        Ok(Self { cfg, model, opt, sampler, iteration: 0 })
    }

    /// Restores model, optimizer moments and iteration from a checkpoint.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let cfg = config_from_checkpoint(&ckpt)?;
        let mut model_cfg = cfg.model.clone();
        model_cfg.pretrained = None;
        let model = Model::new(model_cfg, cfg.seed)?;
        model.load_state(&ckpt.tensors)?;
        let mut t = Self::with_model(cfg, model)?;
        t.opt.load_state(&ckpt.tensors, ckpt.iteration as u64)?;
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn sample_batch(&self, ds: &Dataset, iteration: usize) -> Result<Vec<Triple>> {
        let mut rng = stream(self.cfg.seed, Purpose::Batch, iteration as u64);
        sample_triple_batch(ds, &self.sampler, &mut rng)
    }

    /// Samples the batch of the current iteration and takes one step.
    pub fn train_step(&mut self, ds: &Dataset) -> Result<StepReport> {
        let triples = self.sample_batch(ds, self.iteration)?;
        self.step_on(&triples)
    }

    /// One optimizer step on the given triples.
    pub fn step_on(&mut self, triples: &[Triple]) -> Result<StepReport> {
        if self.iteration >= self.cfg.max_iters {
            return Err(Error::Argument(format!("iteration budget of {} steps is exhausted", self.cfg.max_iters)));
        }
        let it = self.iteration;
        let batch = BatchTensors::from_triples(&self.model, triples)?;
        let draws = StepDraws::draw(&self.cfg, &self.model, batch.len(), it)?;
        let spec = ObjectiveSpec::from_config(&self.cfg);
        let out = forward_losses(&self.model, &batch, &draws, &spec, true)?;
        let (total, losses) = total_loss(&out.terms, &spec.weights)?;
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                detail: format!(
                    "cls={} ind={} aug={} int={} total={}",
                    losses.cls, losses.ind, losses.aug, losses.int, losses.total
                ),
            });
        }
        let grads = total.backward()?;
        let mut sq: BTreeMap<Component, f64> = BTreeMap::new();
        for (name, var) in self.model.params().vars() {
            let c = Component::of_param(name).ok_or_else(|| Error::Config(format!("parameter `{name}` has no component")))?;
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?,
                None => 0.0,
            };
            *sq.entry(c).or_default() += g;
        }
        let lr = lr_at(it, &self.cfg);
        self.opt.step(self.model.params(), &grads, lr)?;
        self.iteration += 1;
        Ok(StepReport {
            iteration: it,
            lr,
            losses,
            grad_norms: sq.into_iter().map(|(c, v)| (c, v.sqrt())).collect(),
            causal_per_anchor: out.causal_per_anchor,
            noncausal_per_anchor: out.noncausal_per_anchor,
            num_pairs: out.num_pairs,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = self.model.state_tensors();
        tensors.extend(self.opt.state_tensors());
        Ok(Checkpoint { iteration: self.iteration, config_json: serde_json::to_string(&self.cfg)?, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint()?)
    }

    /// Trains until `until` steps (capped at `max_iters`) have been taken.
    pub fn run(&mut self, train: &Dataset, val: Option<&Dataset>, out: Option<&RunDir>, until: usize) -> Result<Vec<StepReport>> {
        let until = until.min(self.cfg.max_iters);
        if train.num_classes() != self.cfg.model.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model is configured for {}",
                train.num_classes(),
                self.cfg.model.num_classes
            )));
        }
        let mut reports = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        while self.iteration < until {
            let it = self.iteration;
            let triples = self.sample_batch(train, it)?;
            if let (Some(dir), true) = (out, self.cfg.log_provenance) {
                dir.log_provenance(it, self.cfg.seed, &triples)?;
            }
            let report = self.step_on(&triples)?;
            let done = self.iteration;
            let mut val_acc = None;
            if let (Some(v), true) = (val, self.cfg.eval_every > 0 && done % self.cfg.eval_every == 0) {
                let acc = accuracy(&self.model, v)?;
                val_acc = Some(acc);
                if acc > best {
                    best = acc;
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            if let Some(dir) = out {
                if done % self.cfg.log_every == 0 || done == until || val_acc.is_some() {
                    let l = &report.losses;
                    dir.log_metrics(&MetricsLine {
                        iter: done,
                        cls: l.cls,
                        ind: l.ind,
                        aug: l.aug,
                        int: l.int,
                        total: l.total,
                        lr: report.lr,
                        val_acc,
                    })?;
                }
                if self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0 {
                    self.save(&dir.path().join(checkpoint_name(done)))?;
                }
            }
            log::debug!("iter {done}: total {:.4}", report.losses.total);
            reports.push(report);
            if matches!(self.cfg.patience, Some(p) if stale >= p) {
                log::info!("stopping early at iteration {done}: no validation improvement in {stale} evaluations");
                break;
            }
        }
        if let Some(dir) = out {
            self.save(&dir.path().join(FINAL_CHECKPOINT))?;
        }
        Ok(reports)
    }
}

/// Parses the training config stored in a checkpoint.
pub fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainConfig> {
    serde_json::from_str(&ckpt.config_json).map_err(|e| Error::Checkpoint(format!("stored config is unreadable: {e}")))
}

/// Loads a model (no optimizer state) for inference.
pub fn load_model(path: &Path) -> Result<(Model, TrainConfig, usize)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = config_from_checkpoint(&ckpt)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.pretrained = None;
    let model = Model::new(model_cfg, cfg.seed)?;
    model.load_state(&ckpt.tensors)?;
    Ok((model, cfg, ckpt.iteration))
}

/// Output directory of a run.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    metrics: std::cell::RefCell<BufWriter<File>>,
    provenance: std::cell::RefCell<Option<BufWriter<File>>>,
}

impl RunDir {
    /// Creates the directory and writes the config snapshot. Metrics are
    /// appended so a resumed run continues the same file.
    pub fn create(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let snap = path.join(CONFIG_SNAPSHOT);
        std::fs::write(&snap, cfg.to_toml_string()?).map_err(|e| Error::io(&snap, e))?;
        let mpath = path.join(METRICS_FILE);
        let f = OpenOptions::new().create(true).append(true).open(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(Self { path: path.to_path_buf(), metrics: BufWriter::new(f).into(), provenance: None.into() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn log_metrics(&self, line: &MetricsLine) -> Result<()> {
        let mut w = self.metrics.borrow_mut();
        let p = self.path.join(METRICS_FILE);
        serde_json::to_writer(&mut *w, line)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&p, e))
    }

    fn log_provenance(&self, iter: usize, seed: u64, triples: &[Triple]) -> Result<()> {
        let p = self.path.join(PROVENANCE_FILE);
        let mut slot = self.provenance.borrow_mut();
        if slot.is_none() {
            let f = OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?;
            *slot = Some(BufWriter::new(f));
        }
        let w = slot.as_mut().expect("opened above");
        for t in triples {
            let line = ProvenanceLine {
                iter,
                seed,
                label: t.label,
                anchor: &t.anchor.sample_id,
                positive: &t.positive.sample_id,
                strategies: &t.provenance.strategies,
                noise_seed: t.provenance.noise_seed,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    }
}

/// Reads every line of a run's `metrics.jsonl`.
pub fn read_metrics(run: &Path) -> Result<Vec<MetricsLine>> {
    let p = run.join(METRICS_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Builds a trainer and runs the full budget.
pub fn fit(cfg: TrainConfig, train: &Dataset, val: Option<&Dataset>, out: Option<&Path>) -> Result<(Trainer, Vec<StepReport>)> {
    let mut t = Trainer::new(cfg)?;
    let dir = out.map(|p| RunDir::create(p, t.config())).transpose()?;
    let until = t.config().max_iters;
    let reports = t.run(train, val, dir.as_ref(), until)?;
    Ok((t, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::model::{ModelConfig, Precision};
    use crate::rng::seeded;
    use crate::synthetic::{generate_synthetic, SyntheticFactorSpec, SyntheticSplit};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            max_iters: 10,
            base_lr: 1e-3,
            triples_per_class: 1,
            weights: crate::config::WeightsConfig { lambda_samples: 1, ..Default::default() },
            model: ModelConfig {
                feature_dim: 8,
                z_dim: 4,
                encoder_hidden: 4,
                augmentor_hidden: 4,
                num_classes: 3,
                image_size: 8,
                precision: Precision::F64,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tiny_data() -> Dataset {
        let spec = SyntheticFactorSpec { num_classes: 3, image_size: 8, ..Default::default() };
        generate_synthetic(&spec, 4, SyntheticSplit::Train, &mut seeded(0)).unwrap()
    }

    #[test]
    fn lr_schedule_halves_every_period() {
        let pacs = TrainConfig::profile("pacs").unwrap();
        assert_eq!(lr_at(0, &pacs), 1e-4);
        assert_eq!(lr_at(9_999, &pacs), 1e-4);
        assert_eq!(lr_at(10_000, &pacs), 5e-5);
        assert_eq!(lr_at(39_999, &pacs), 1.25e-5);
        let digits = TrainConfig::profile("digits").unwrap();
        assert_eq!(lr_at(10_000, &digits), 5e-4);
        let mut prev = f64::INFINITY;
        for i in (0..50_000).step_by(997) {
            let lr = lr_at(i, &pacs);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn set_sizes_follow_lambda() {
        let ds = tiny_data();
        for lambda in [1, 2, 5] {
            let mut cfg = tiny_cfg();
            cfg.weights.lambda_samples = lambda;
            let mut t = Trainer::new(cfg).unwrap();
            let r = t.train_step(&ds).unwrap();
            assert_eq!(r.causal_per_anchor, 3 + 2 * lambda);
            assert_eq!(r.noncausal_per_anchor, 3 + 2 * lambda);
            // one partner per causal vector by default
            assert_eq!(r.num_pairs, (3 + 2 * lambda) * 3);
        }
    }

    #[test]
    fn zero_weights_reduce_to_classification() {
        let ds = tiny_data();
        let mut cfg = tiny_cfg();
        cfg.weights.alpha1 = 0.0;
        cfg.weights.alpha2 = 0.0;
        cfg.weights.alpha3 = 0.0;
        let mut t = Trainer::new(cfg).unwrap();
        let r = t.train_step(&ds).unwrap();
        assert_eq!(r.losses.total, r.losses.cls);
    }

    #[test]
    fn every_component_receives_gradient() {
        let ds = tiny_data();
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        let mut seen: BTreeMap<Component, f64> = BTreeMap::new();
        for _ in 0..3 {
            for (c, g) in t.train_step(&ds).unwrap().grad_norms {
                *seen.entry(c).or_default() += g;
            }
        }
        for c in Component::ALL {
            assert!(seen[&c] > 0.0, "{c:?} received no gradient");
        }
    }

    #[test]
    fn budget_and_checkpoint_schedule() {
        let ds = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { checkpoint_every: 5, log_provenance: true, ..tiny_cfg() };
        let (t, reports) = fit(cfg, &ds, None, Some(dir.path())).unwrap();
        assert_eq!(reports.len(), 10);
        assert_eq!(t.iteration(), 10);
        for it in [5, 10] {
            assert!(dir.path().join(checkpoint_name(it)).exists());
        }
        assert!(!dir.path().join(checkpoint_name(3)).exists());
        assert!(dir.path().join(FINAL_CHECKPOINT).exists());
        assert_eq!(read_metrics(dir.path()).unwrap().len(), 10);
        let prov = std::fs::read_to_string(dir.path().join(PROVENANCE_FILE)).unwrap();
        assert_eq!(prov.lines().count(), 10 * 3);
        let mut t = t;
        assert!(t.train_step(&ds).is_err());
    }

    #[test]
    fn resume_matches_straight_run() {
        let ds = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let mut straight = Trainer::new(tiny_cfg()).unwrap();
        let full = straight.run(&ds, None, None, 10).unwrap();

        let mut first = Trainer::new(tiny_cfg()).unwrap();
        first.run(&ds, None, None, 4).unwrap();
        let path = dir.path().join("ckpt");
        first.save(&path).unwrap();
        let mut resumed = Trainer::from_checkpoint(&path).unwrap();
        assert_eq!(resumed.iteration(), 4);
        let rest = resumed.run(&ds, None, None, 10).unwrap();
        for (a, b) in full[4..].iter().zip(&rest) {
            assert_eq!(a.losses, b.losses);
        }
    }

    #[test]
    fn class_count_mismatch_is_config_error() {
        let spec = SyntheticFactorSpec { num_classes: 4, image_size: 8, ..Default::default() };
        let ds = generate_synthetic(&spec, 2, SyntheticSplit::Train, &mut seeded(0)).unwrap();
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        assert!(matches!(t.run(&ds, None, None, 1), Err(Error::Config(_))));
    }
}
