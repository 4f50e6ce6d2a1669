//! Accuracy evaluation and the evaluation protocols.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_folder_dataset, Dataset, LoadOptions, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::Model;

/// Images per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 128;

pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SingleDg,
    SeveritySweep,
    LeaveOneOut,
    SyntheticShift,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SingleDg => "single_dg",
            Protocol::SeveritySweep => "severity_sweep",
            Protocol::LeaveOneOut => "leave_one_out",
            Protocol::SyntheticShift => "synthetic_shift",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Protocol::SingleDg, Protocol::SeveritySweep, Protocol::LeaveOneOut, Protocol::SyntheticShift]
            .into_iter()
            .find(|p| p.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Argument(format!("unknown protocol `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub protocol: Protocol,
    pub per_target: BTreeMap<String, f64>,
    /// Unweighted mean of `per_target`.
    pub average: f64,
    pub seed: u64,
    pub checkpoint_ref: PathBuf,
    /// Model-selection rule, recorded for protocols that need one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<String>,
}

impl MetricsRecord {
    pub fn new(protocol: Protocol, per_target: BTreeMap<String, f64>, seed: u64, checkpoint_ref: PathBuf) -> Result<Self> {
        if per_target.is_empty() {
            return Err(Error::Argument("a metrics record needs at least one target".into()));
        }
        if let Some((t, a)) = per_target.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Argument(format!("accuracy {a} for `{t}` is outside [0, 1]")));
        }
        let average = per_target.values().sum::<f64>() / per_target.len() as f64;
        Ok(Self { protocol, per_target, average, seed, checkpoint_ref, selection: None })
    }

    pub fn append_to(&self, run_dir: &Path) -> Result<()> {
        let p = run_dir.join(RECORDS_FILE);
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?;
        let mut line = serde_json::to_vec(self)?;
        line.push(b'\n');
        f.write_all(&line).map_err(|e| Error::io(&p, e))
    }
}

pub fn read_records(run_dir: &Path) -> Result<Vec<MetricsRecord>> {
    let p = run_dir.join(RECORDS_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Predicted class per image, in dataset order.
pub fn predictions(model: &Model, images: &[&ImageTensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let x = model.images_to_tensor(chunk.iter().copied())?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

/// Top-1 accuracy of `argmax H(f_c)` on `ds`.
pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data(format!("target `{}` is empty", ds.name())));
    }
    if ds.num_classes() != model.config().num_classes {
        return Err(Error::Config(format!(
            "target `{}` has {} classes but the model predicts {}",
            ds.name(),
            ds.num_classes(),
            model.config().num_classes
        )));
    }
    let images: Vec<&ImageTensor> = ds.samples().iter().map(|s| &s.image).collect();
    let pred = predictions(model, &images)?;
    let correct = pred.iter().zip(ds.samples()).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Accuracy on every named target.
pub fn evaluate(
    model: &Model,
    targets: &[(String, Dataset)],
    protocol: Protocol,
    seed: u64,
    checkpoint_ref: &Path,
) -> Result<MetricsRecord> {
    if targets.is_empty() {
        return Err(Error::Argument("no evaluation targets".into()));
    }
    let mut per = BTreeMap::new();
    for (name, ds) in targets {
        if per.insert(name.clone(), accuracy(model, ds)?).is_some() {
            return Err(Error::Argument(format!("duplicate target name `{name}`")));
        }
    }
    MetricsRecord::new(protocol, per, seed, checkpoint_ref.to_path_buf())
}

fn sorted_subdirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `root/<level>/<corruption>/<class>/...` as one target per severity
/// level with all corruption types pooled.
pub fn load_severity_targets(root: &Path, opts: LoadOptions) -> Result<Vec<(String, Dataset)>> {
    let levels = sorted_subdirs(root)?;
    if levels.is_empty() {
        return Err(Error::Data(format!("{}: no severity level folders", root.display())));
    }
    let mut out = Vec::new();
    for level in levels {
        let parts = sorted_subdirs(&level)?
            .iter()
            .map(|c| load_folder_dataset(c, Split::All, opts))
            .collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Err(Error::Data(format!("{}: no corruption folders", level.display())));
        }
        let name = dir_name(&level);
        let refs: Vec<&Dataset> = parts.iter().collect();
        out.push((name.clone(), Dataset::union(&refs, name)?));
    }
    Ok(out)
}

/// Loads every `root/<domain>/` as a named domain dataset.
pub fn load_domains(root: &Path, opts: LoadOptions) -> Result<Vec<(String, Dataset)>> {
    let dirs = sorted_subdirs(root)?;
    if dirs.len() < 2 {
        return Err(Error::Data(format!("{}: leave-one-domain-out needs at least two domain folders", root.display())));
    }
    dirs.iter().map(|d| Ok((dir_name(d), load_folder_dataset(d, Split::All, opts)?))).collect()
}

/// Training union of all domains except `held_out`, and the held-out domain.
/// The union is a plain [`Dataset`]: domain identity does not survive it.
pub fn leave_one_out<'a>(domains: &'a [(String, Dataset)], held_out: &str) -> Result<(Dataset, &'a Dataset)> {
    let test = domains
        .iter()
        .find(|(n, _)| n == held_out)
        .map(|(_, d)| d)
        .ok_or_else(|| Error::Argument(format!("no domain named `{held_out}`")))?;
    let rest: Vec<&Dataset> = domains.iter().filter(|(n, _)| n != held_out).map(|(_, d)| d).collect();
    Ok((Dataset::union(&rest, format!("all-but-{held_out}"))?, test))
}
