//! Training objectives over feature tensors.
//!
//! Probabilities are floored at [`LOG_FLOOR`] before any logarithm. Every
//! loss returns a scalar tensor so the caller can back-propagate.

use candle_core::{DType, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

pub const LOG_FLOOR: f64 = 1e-8;

/// Norm-product floor for the cosine in the independence term.
pub const COS_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the independence term.
    pub alpha1: f64,
    /// Weight of the augmentation term.
    pub alpha2: f64,
    /// Weight of the intervention term.
    pub alpha3: f64,
    /// Hinge margin of the augmentation term.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 0.5, alpha2: 0.5, alpha3: 0.5, delta: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3), ("delta", self.delta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar values of every term of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub cls: f64,
    pub ind: f64,
    pub aug: f64,
    pub int: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.cls, self.ind, self.aug, self.int, self.total].iter().all(|v| v.is_finite())
    }
}

/// The four terms as differentiable scalars.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub cls: Tensor,
    pub ind: Tensor,
    pub aug: Tensor,
    pub int: Tensor,
}

/// `L = L_cls + α1 L_ind + α2 L_aug + α3 L_int`.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<(Tensor, LossBundle)> {
    let total = (&terms.cls + (&terms.ind * w.alpha1)?)?;
    let total = (total + (&terms.aug * w.alpha2)?)?;
    let total = (total + (&terms.int * w.alpha3)?)?;
    let s = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let bundle = LossBundle { cls: s(&terms.cls)?, ind: s(&terms.ind)?, aug: s(&terms.aug)?, int: s(&terms.int)?, total: s(&total)? };
    Ok((total, bundle))
}

fn floored_log_softmax(logits: &Tensor) -> Result<(Tensor, Tensor)> {
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let p = logp.exp()?;
    let floor = Tensor::full(LOG_FLOOR.ln(), logp.shape(), logp.device())?.to_dtype(logp.dtype())?;
    Ok((logp.maximum(&floor)?, p))
}

fn label_tensor(labels: &[usize], like: &Tensor) -> Result<Tensor> {
    let v: Vec<u32> = labels.iter().map(|l| *l as u32).collect();
    Ok(Tensor::from_vec(v, (labels.len(), 1), like.device())?)
}

/// Per-row cross-entropy `-log p_y` from logits.
pub fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Argument(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| **l >= k) {
        return Err(Error::Argument(format!("label {l} out of range for {k} classes")));
    }
    let (logp, _) = floored_log_softmax(logits)?;
    Ok(logp.gather(&label_tensor(labels, logits)?, 1)?.squeeze(1)?.neg()?)
}

/// Per-row `KL(U ‖ softmax(logits))` against the uniform distribution.
pub fn kl_uniform_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let (logp, _) = floored_log_softmax(logits)?;
    Ok(((logp.mean(1)? + (k as f64).ln())?).neg()?)
}

/// Per-row `KL(P ‖ Q)` between the softmax of two logit batches.
pub fn kl_rows(p_logits: &Tensor, q_logits: &Tensor) -> Result<Tensor> {
    if p_logits.dims() != q_logits.dims() {
        return Err(Error::Argument("KL operands differ in shape".into()));
    }
    let (logp, p) = floored_log_softmax(p_logits)?;
    let (logq, _) = floored_log_softmax(q_logits)?;
    Ok((p * (logp - logq)?)?.sum(1)?)
}

/// Mean over rows of `CE(H(f_c), y) + KL(U ‖ H(f_b))`.
pub fn loss_cls(model: &Model, f_c: &Tensor, f_b: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let ce = cross_entropy_rows(&model.classify_logits(f_c)?, labels)?;
    let kl = kl_uniform_rows(&model.classify_logits(f_b)?)?;
    Ok((ce + kl)?.mean_all()?)
}

/// Mean over rows of `½ cos²(f_c, f_b)`.
pub fn loss_ind(f_c: &Tensor, f_b: &Tensor) -> Result<Tensor> {
    if f_c.dims() != f_b.dims() {
        return Err(Error::Argument("causal and non-causal batches differ in shape".into()));
    }
    let dot = (f_c * f_b)?.sum(1)?;
    let nc = f_c.sqr()?.sum(1)?;
    let nb = f_b.sqr()?.sum(1)?;
    let prod = (nc * nb)?;
    let zero_rows = prod.to_dtype(DType::F64)?.to_vec1::<f64>()?.iter().filter(|v| **v < COS_FLOOR).count();
    if zero_rows > 0 {
        log::warn!("independence term: {zero_rows} rows with a zero-norm feature half");
    }
    let denom = prod.clamp(COS_FLOOR, f64::INFINITY)?.sqrt()?;
    Ok(((dot / denom)?.sqr()? * 0.5)?.mean_all()?)
}

/// Triplet-style term between anchor features and their augmentations.
///
/// `f_c`, `f_b` are `(N, h)`; `hat_c`, `hat_b` are `(V, λ, N, h)` with one
/// slice per meta-knowledge branch. For each branch the hinge
/// `d(f̂_c, f_c) + max(0, d(f̂_c, f_c) − d(f̂_b, f_b) + δ)` over squared
/// Euclidean distances is averaged over `λ`, summed over branches, then
/// averaged over the batch.
pub fn loss_aug(f_c: &Tensor, f_b: &Tensor, hat_c: &Tensor, hat_b: &Tensor, delta: f64) -> Result<Tensor> {
    let (_, lambda, n, h) = hat_c.dims4()?;
    if hat_b.dims() != hat_c.dims() || f_c.dims() != [n, h] || f_b.dims() != [n, h] {
        return Err(Error::Argument(format!(
            "augmentation term shapes disagree: f_c {:?}, f_b {:?}, f̂_c {:?}, f̂_b {:?}",
            f_c.dims(),
            f_b.dims(),
            hat_c.dims(),
            hat_b.dims()
        )));
    }
    let dc = hat_c.broadcast_sub(f_c)?.sqr()?.sum(3)?;
    let db = hat_b.broadcast_sub(f_b)?.sqr()?.sum(3)?;
    let hinge = ((&dc - db)? + delta)?.relu()?;
    let per = (dc + hinge)?;
    // (V, λ, N): mean over λ and N, sum over V
    Ok((per.sum_all()? / (lambda * n) as f64)?)
}

/// How causal and non-causal vectors are combined for the intervention term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Pairing {
    /// Every causal vector with every non-causal vector in its pool.
    FullProduct,
    /// Each causal vector with `per_causal` uniformly drawn non-causal vectors.
    Shuffled { per_causal: usize },
}

impl Default for Pairing {
    fn default() -> Self {
        Pairing::Shuffled { per_causal: 1 }
    }
}

/// Which non-causal vectors a causal vector may be paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionScope {
    /// Only vectors derived from the same anchor.
    PerAnchor,
    /// Any vector in the batch.
    #[default]
    Batch,
}

/// Index pairs `(causal row, non-causal row)`. `causal_groups[i]` and
/// `noncausal_groups[j]` name the anchor each row was derived from.
pub fn select_pairs<R: Rng + ?Sized>(
    causal_groups: &[usize],
    noncausal_groups: &[usize],
    pairing: Pairing,
    scope: InterventionScope,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if causal_groups.is_empty() || noncausal_groups.is_empty() {
        return Err(Error::Argument("intervention sets must be non-empty".into()));
    }
    let all: Vec<usize> = (0..noncausal_groups.len()).collect();
    let mut pools: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    if scope == InterventionScope::PerAnchor {
        for (j, g) in noncausal_groups.iter().enumerate() {
            pools.entry(*g).or_default().push(j);
        }
    }
    let mut out = Vec::new();
    for (i, g) in causal_groups.iter().enumerate() {
        let pool = match scope {
            InterventionScope::Batch => &all,
            InterventionScope::PerAnchor => pools
                .get(g)
                .ok_or_else(|| Error::Argument(format!("anchor {g} has no non-causal vectors")))?,
        };
        match pairing {
            Pairing::FullProduct => out.extend(pool.iter().map(|j| (i, *j))),
            Pairing::Shuffled { per_causal } => {
                for _ in 0..per_causal.max(1) {
                    out.push((i, pool[rng.random_range(0..pool.len())]));
                }
            }
        }
    }
    Ok(out)
}

/// Mean over pairs of `CE(H(M(f̃_c ⊕ f̃_b)), y) + KL(H(f̃_c) ‖ H(M(f̃_c ⊕ f̃_b)))`,
/// where `y` is the label of the causal vector.
pub fn loss_int(model: &Model, causal: &Tensor, noncausal: &Tensor, labels: &[usize], pairs: &[(usize, usize)]) -> Result<Tensor> {
    let (nc, _) = causal.dims2()?;
    let (nb, _) = noncausal.dims2()?;
    if labels.len() != nc {
        return Err(Error::Argument(format!("{} labels for {nc} causal vectors", labels.len())));
    }
    if pairs.is_empty() {
        return Err(Error::Argument("no intervention pairs".into()));
    }
    if let Some((i, j)) = pairs.iter().find(|(i, j)| *i >= nc || *j >= nb) {
        return Err(Error::Argument(format!("pair ({i}, {j}) out of range")));
    }
    let dev = causal.device();
    let ci = Tensor::from_vec(pairs.iter().map(|p| p.0 as u32).collect::<Vec<_>>(), pairs.len(), dev)?;
    let bi = Tensor::from_vec(pairs.iter().map(|p| p.1 as u32).collect::<Vec<_>>(), pairs.len(), dev)?;
    let fc = causal.index_select(&ci, 0)?;
    let fb = noncausal.index_select(&bi, 0)?;
    let y: Vec<usize> = pairs.iter().map(|p| labels[p.0]).collect();

    let q = model.intervene_logits(&fc, &fb)?;
    let ce = cross_entropy_rows(&q, &y)?;
    // H(f̃_c) per causal row, gathered per pair
    let p = model.classify_logits(causal)?.index_select(&ci, 0)?;
    let kl = kl_rows(&p, &q)?;
    Ok((ce + kl)?.mean_all()?)
}
