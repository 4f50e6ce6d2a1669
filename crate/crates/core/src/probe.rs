//! Linear probes on frozen feature slices.
//!
//! A multinomial logistic regression is fit by L-BFGS on standardized
//! features with a fixed per-class 80/20 split.

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{FeaturePair, Model};
use crate::rng::{stream, Purpose};

/// Minimum samples per class for the 80/20 split.
pub const MIN_PER_CLASS: usize = 10;

/// L2 penalty on the probe weights (biases are not penalized).
pub const PROBE_L2: f64 = 1e-4;

pub const PROBE_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    #[serde(rename = "f_c")]
    Fc,
    #[serde(rename = "f_b")]
    Fb,
    Full,
}

impl ProbeTarget {
    pub fn select(self, pair: &FeaturePair) -> Vec<f64> {
        match self {
            ProbeTarget::Fc => pair.f_c.clone(),
            ProbeTarget::Fb => pair.f_b.clone(),
            ProbeTarget::Full => pair.concat(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeTarget::Fc => "f_c",
            ProbeTarget::Fb => "f_b",
            ProbeTarget::Full => "full",
        }
    }
}

impl std::str::FromStr for ProbeTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" | "f_c" => Ok(ProbeTarget::Fc),
            "fb" | "f_b" => Ok(ProbeTarget::Fb),
            "full" => Ok(ProbeTarget::Full),
            _ => Err(Error::Argument(format!("unknown probe target `{s}`; expected fc, fb or full"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe_target: ProbeTarget,
    pub train_acc: f64,
    pub heldout_acc: f64,
    /// `1 / num_classes`.
    pub chance: f64,
    pub n_train: usize,
    pub n_heldout: usize,
}

/// Frozen features of every sample, in dataset order.
pub fn extract_pairs(model: &Model, ds: &Dataset) -> Result<Vec<FeaturePair>> {
    let images: Vec<&ImageTensor> = ds.samples().iter().map(|s| &s.image).collect();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(crate::eval::EVAL_CHUNK) {
        let x = model.images_to_tensor(chunk.iter().copied())?;
        out.extend(model.extract(&x, false)?.pairs()?);
    }
    Ok(out)
}

/// Per-class 80/20 split of indices, fixed for a given label vector.
pub fn split_indices(labels: &[usize], num_classes: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut rng = stream(0, Purpose::Split, 0);
    for k in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == k).collect();
        if idx.len() < MIN_PER_CLASS {
            return Err(Error::Data(format!(
                "class {k} has {} samples; the probe split needs at least {MIN_PER_CLASS} per class",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let cut = (idx.len() * 4).div_ceil(5);
        held.extend_from_slice(&idx[cut..]);
        train.extend_from_slice(&idx[..cut]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

/// Multinomial logistic regression, parameters laid out row-major as
/// `K × (D + 1)` with the bias last in each row.
struct Softmax<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    l2: f64,
}

impl Softmax<'_> {
    fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    fn logits(&self, w: &[f64], row: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.k)
            .map(|c| {
                let wc = &w[c * (d + 1)..(c + 1) * (d + 1)];
                wc[..d].iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + wc[d]
            })
            .collect()
    }

    fn log_softmax(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        let d = self.dim();
        w.chunks(d + 1).map(|r| r[..d].iter().map(|v| v * v).sum::<f64>()).sum::<f64>() * 0.5 * self.l2
    }
}

impl CostFunction for Softmax<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, w: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let n = self.x.len() as f64;
        let nll: f64 = self.x.iter().zip(self.y).map(|(r, y)| -Self::log_softmax(&self.logits(w, r))[*y]).sum();
        Ok(nll / n + self.penalty(w))
    }
}

impl Gradient for Softmax<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, w: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let d = self.dim();
        let n = self.x.len() as f64;
        let mut g = vec![0.0; w.len()];
        for (r, y) in self.x.iter().zip(self.y) {
            let lp = Self::log_softmax(&self.logits(w, r));
            for c in 0..self.k {
                let coef = (lp[c].exp() - if c == *y { 1.0 } else { 0.0 }) / n;
                let gc = &mut g[c * (d + 1)..(c + 1) * (d + 1)];
                for (gi, xi) in gc[..d].iter_mut().zip(r) {
                    *gi += coef * xi;
                }
                gc[d] += coef;
            }
        }
        for c in 0..self.k {
            for j in 0..d {
                g[c * (d + 1) + j] += self.l2 * w[c * (d + 1) + j];
            }
        }
        Ok(g)
    }
}

/// Fitted probe: standardization plus softmax weights.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    k: usize,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize) -> Result<Self> {
        let d = x.first().map_or(0, |r| r.len());
        if x.is_empty() || d == 0 {
            return Err(Error::Data("probe needs at least one non-empty feature row".into()));
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-12 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &mean, &scale)).collect();
        let problem = Softmax { x: &xs, y, k, l2: PROBE_L2 };
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
            .with_tolerance_grad(PROBE_GRAD_TOL)
            .map_err(|e| Error::Argument(e.to_string()))?
            .with_tolerance_cost(0.0)
            .map_err(|e| Error::Argument(e.to_string()))?;
        let res = Executor::new(problem, solver)
            .configure(|s| s.param(vec![0.0; k * (d + 1)]).max_iters(1000))
            .run()
            .map_err(|e| Error::Data(format!("probe optimization failed: {e}")))?;
        let weights = res.state().get_best_param().cloned().ok_or_else(|| Error::Data("probe produced no solution".into()))?;
        Ok(Self { mean, scale, weights, k })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let xs = standardize(row, &self.mean, &self.scale);
        let d = xs.len();
        let z: Vec<f64> = (0..self.k)
            .map(|c| {
                let wc = &self.weights[c * (d + 1)..(c + 1) * (d + 1)];
                wc[..d].iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>() + wc[d]
            })
            .collect();
        argmax(&z)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let correct = x.iter().zip(y).filter(|(r, l)| self.predict(r) == **l).count();
        correct as f64 / x.len().max(1) as f64
    }
}

fn standardize(r: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    r.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn argmax(z: &[f64]) -> usize {
    z.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best }).0
}

/// Probe on precomputed feature rows.
pub fn probe_rows(rows: &[Vec<f64>], labels: &[usize], num_classes: usize, target: ProbeTarget) -> Result<ProbeReport> {
    let (tr, ho) = split_indices(labels, num_classes)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|i| rows[*i].clone()).collect(), idx.iter().map(|i| labels[*i]).collect())
    };
    let (xt, yt) = pick(&tr);
    let (xh, yh) = pick(&ho);
    let probe = LinearProbe::fit(&xt, &yt, num_classes)?;
    Ok(ProbeReport {
        probe_target: target,
        train_acc: probe.accuracy(&xt, &yt),
        heldout_acc: probe.accuracy(&xh, &yh),
        chance: 1.0 / num_classes as f64,
        n_train: xt.len(),
        n_heldout: xh.len(),
    })
}

/// Fits a fresh linear classifier on the chosen slice of frozen features.
pub fn linear_probe(model: &Model, ds: &Dataset, target: ProbeTarget) -> Result<ProbeReport> {
    let labels: Vec<usize> = ds.samples().iter().map(|s| s.label).collect();
    split_indices(&labels, ds.num_classes())?;
    let rows: Vec<Vec<f64>> = extract_pairs(model, ds)?.iter().map(|p| target.select(p)).collect();
    probe_rows(&rows, &labels, ds.num_classes(), target)
}
