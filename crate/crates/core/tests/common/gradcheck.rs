//! Central finite differences against autograd for the loss terms, in
//! float64 on a tiny model (d=8, z=4, K=3, two triples, one sample per encoder).

use candle_core::{Tensor, Var};
use clfa_core::config::{TrainConfig, WeightsConfig};
use clfa_core::data::{sample_triple_batch, TripleSampler};
use clfa_core::objectives::LossTerms;
use clfa_core::trainer::{forward_losses, BatchTensors, ObjectiveSpec, StepDraws};
use clfa_core::{generate_synthetic, seeded, Model, ModelConfig, Precision, SyntheticFactorSpec, SyntheticSplit};
use rand::Rng;

pub const PROBES: usize = 20;
const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;

struct Fixture {
    cfg: TrainConfig,
    model: Model,
    batch: BatchTensors,
    draws: StepDraws,
}

fn fixture() -> Fixture {
    let cfg = TrainConfig {
        triples_per_class: 1,
        weights: WeightsConfig { lambda_samples: 1, ..Default::default() },
        model: ModelConfig {
            feature_dim: 8,
            z_dim: 4,
            encoder_hidden: 6,
            augmentor_hidden: 6,
            num_classes: 3,
            image_size: 8,
            precision: Precision::F64,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = Model::new(cfg.model.clone(), 11).unwrap();
    let spec = SyntheticFactorSpec { num_classes: 3, image_size: 8, ..Default::default() };
    let ds = generate_synthetic(&spec, 4, SyntheticSplit::Train, &mut seeded(3)).unwrap();
    let sampler = TripleSampler::new(1, cfg.dataset_tag, cfg.transforms.bank().unwrap());
    let triples = sample_triple_batch(&ds, &sampler, &mut seeded(4)).unwrap();
    let batch = BatchTensors::from_triples(&model, &triples[..2]).unwrap();
    let draws = StepDraws::draw(&cfg, &model, 2, 0).unwrap();
    Fixture { cfg, model, batch, draws }
}

fn eval(f: &Fixture, pick: &dyn Fn(&LossTerms) -> Tensor) -> Tensor {
    // eval-mode batch norm keeps the loss a fixed function of the parameters
    let spec = ObjectiveSpec::from_config(&f.cfg);
    let out = forward_losses(&f.model, &f.batch, &f.draws, &spec, false).unwrap();
    pick(&out.terms)
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn set_entry(var: &Var, idx: usize, value: f64) {
    let t = var.as_tensor();
    let mut v = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    v[idx] = value;
    var.set(&Tensor::from_vec(v, t.dims(), t.device()).unwrap()).unwrap();
}

/// Worst relative error over the probes, or a description of the first failing probe.
pub fn check(name: &str, pick: &dyn Fn(&LossTerms) -> Tensor) -> Result<f64, String> {
    let f = fixture();
    let loss = eval(&f, pick);
    let grads = loss.backward().unwrap();
    let with_grad: Vec<(&String, &Var, Vec<f64>)> = f
        .model
        .params()
        .vars()
        .iter()
        .filter_map(|(n, v)| grads.get(v.as_tensor()).map(|g| (n, v, g.flatten_all().unwrap().to_vec1::<f64>().unwrap())))
        .filter(|(_, _, g)| g.iter().any(|x| *x != 0.0))
        .collect();
    if with_grad.is_empty() {
        return Err(format!("{name}: no parameter has a gradient"));
    }

    let mut rng = seeded(name.len() as u64 * 7919);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < PROBES {
        let (pname, var, g) = &with_grad[rng.random_range(0..with_grad.len())];
        let idx = rng.random_range(0..g.len());
        let analytic = g[idx];
        let orig = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()[idx];
        set_entry(var, idx, orig + H);
        let up = scalar(&eval(&f, pick));
        set_entry(var, idx, orig - H);
        let down = scalar(&eval(&f, pick));
        set_entry(var, idx, orig);
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            // both vanish; the relative error is undefined here
            if (analytic - numeric).abs() >= 1e-9 {
                return Err(format!("{name} {pname}[{idx}]: {analytic} vs {numeric}"));
            }
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        if rel >= REL_TOL {
            return Err(format!("{name} {pname}[{idx}]: analytic {analytic}, numeric {numeric}, rel {rel}"));
        }
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(worst)
}

