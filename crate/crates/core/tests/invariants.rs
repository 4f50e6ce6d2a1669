//! Property tests over the objective and model invariants.

use candle_core::{DType, Device, Tensor};
use clfa_core::nn::Component;
use clfa_core::objectives::{cross_entropy_rows, kl_uniform_rows, loss_cls, loss_ind, loss_int, select_pairs};
use clfa_core::{seeded, InterventionScope, Model, ModelConfig, Pairing, Precision};
use proptest::prelude::*;
use proptest::test_runner::Config as ProptestConfig;

const HALF: usize = 4;
const K: usize = 3;

fn model(seed: u64) -> Model {
    let cfg = ModelConfig {
        feature_dim: 2 * HALF,
        z_dim: 3,
        encoder_hidden: 5,
        augmentor_hidden: 5,
        num_classes: K,
        image_size: 8,
        precision: Precision::F64,
        ..Default::default()
    };
    Model::new(cfg, seed).unwrap()
}

fn rows(v: &[f64], n: usize) -> Tensor {
    Tensor::from_vec(v.to_vec(), (n, HALF), &Device::Cpu).unwrap()
}

fn value(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn reorder(t: &Tensor, perm: &[usize]) -> Tensor {
    let idx = Tensor::from_vec(perm.iter().map(|&i| i as u32).collect::<Vec<_>>(), perm.len(), &Device::Cpu).unwrap();
    t.index_select(&idx, 0).unwrap()
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn features(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * HALF)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn full_product_intervention_ignores_set_order(
        fc in features(5), fb in features(4), labels in prop::collection::vec(0usize..K, 5),
        pc in permutation(5), pb in permutation(4), seed in 0u64..1000,
    ) {
        let m = model(seed);
        let (c, b) = (rows(&fc, 5), rows(&fb, 4));
        let all_pairs = |nc: usize, nb: usize| {
            select_pairs(&vec![0; nc], &vec![0; nb], Pairing::FullProduct, InterventionScope::Batch, &mut seeded(0)).unwrap()
        };
        let base = value(&loss_int(&m, &c, &b, &labels, &all_pairs(5, 4)).unwrap());
        let labels_p: Vec<usize> = pc.iter().map(|&i| labels[i]).collect();
        let permuted = value(&loss_int(&m, &reorder(&c, &pc), &reorder(&b, &pb), &labels_p, &all_pairs(5, 4)).unwrap());
        prop_assert!((base - permuted).abs() < 1e-6, "{base} vs {permuted}");
    }

    #[test]
    fn independence_loss_is_scale_invariant(
        fc in features(6), fb in features(6), a in 1e-3f64..1e3, b in 1e-3f64..1e3,
    ) {
        prop_assume!(fc.chunks(HALF).chain(fb.chunks(HALF)).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let (c, nb) = (rows(&fc, 6), rows(&fb, 6));
        let base = value(&loss_ind(&c, &nb).unwrap());
        let scaled = value(&loss_ind(&(&c * a).unwrap(), &(&nb * b).unwrap()).unwrap());
        prop_assert!((base - scaled).abs() < 1e-6, "{base} vs {scaled}");
    }

    #[test]
    fn one_classifier_step_lowers_each_objective(
        fc in features(6), fb in features(6), labels in prop::collection::vec(0usize..K, 6), seed in 0u64..1000,
    ) {
        let (c, b) = (rows(&fc, 6), rows(&fb, 6));
        let ce = |m: &Model| cross_entropy_rows(&m.classify_logits(&c).unwrap(), &labels).unwrap().mean_all().unwrap();
        let kl = |m: &Model| kl_uniform_rows(&m.classify_logits(&b).unwrap()).unwrap().mean_all().unwrap();
        let cls = |m: &Model| loss_cls(m, &c, &b, &labels).unwrap();
        // the two halves can pull the head in opposite directions, so each
        // objective is stepped on its own from the same start
        let objectives: [(&str, &dyn Fn(&Model) -> Tensor); 3] = [("cross-entropy", &ce), ("uniform KL", &kl), ("cls", &cls)];
        for (what, f) in objectives {
            let m = model(seed);
            let before = f(&m);
            let grads = before.backward().unwrap();
            for (name, var) in m.params().vars() {
                if Component::of_param(name) == Some(Component::Classifier) {
                    let g = grads.get(var.as_tensor()).unwrap();
                    var.set(&(var.as_tensor() - (g * 1e-3).unwrap()).unwrap()).unwrap();
                }
            }
            let (v0, v1) = (value(&before), value(&f(&m)));
            prop_assert!(v1 <= v0, "{what} {v0} -> {v1}");
        }
    }
}

#[test]
fn augmentor_is_one_parameter_set_for_all_branches() {
    let m = model(1);
    let aug: Vec<&String> = m.params().vars().keys().filter(|n| Component::of_param(n) == Some(Component::Augmentor)).collect();
    let heads: Vec<&String> = m.params().vars().keys().filter(|n| Component::of_param(n) == Some(Component::Classifier)).collect();
    assert!(!aug.is_empty());
    // one weight and one bias per layer; no per-branch copies
    assert!(aug.iter().all(|n| !n.contains("ag") && !n.contains("ap")), "{aug:?}");
    assert_eq!(heads.len(), 2, "{heads:?}");

    let fc = rows(&[0.5, -1.0, 2.0, 0.1], 1);
    let fb = rows(&[-0.3, 0.7, 0.2, 1.5], 1);
    let z = Tensor::from_vec(vec![0.2, -0.4, 1.0], (1, 3), &Device::Cpu).unwrap();
    let before = [m.augment(&fc, &z).unwrap(), m.augment(&fb, &z).unwrap()];
    // an update through one branch is seen by the other
    let grads = m.augment(&fc, &z).unwrap().sum_all().unwrap().backward().unwrap();
    for name in &aug {
        let var = &m.params().vars()[*name];
        if let Some(g) = grads.get(var.as_tensor()) {
            var.set(&(var.as_tensor() - (g * 0.1).unwrap()).unwrap()).unwrap();
        }
    }
    let after = [m.augment(&fc, &z).unwrap(), m.augment(&fb, &z).unwrap()];
    for (b, a) in before.iter().zip(&after) {
        let d = value(&(b - a).unwrap().abs().unwrap().sum_all().unwrap());
        assert!(d > 0.0);
    }
}
