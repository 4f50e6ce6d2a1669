//! Labeled datasets, folder loading and class-balanced triple sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::seeded;
use crate::transforms::{compose, DatasetTag, Strategy, TransformBank};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub label: usize,
    pub sample_id: String,
}

/// Immutable labeled dataset. Samples carry no domain field, so nothing
/// downstream of the loader can condition on domain identity.
#[derive(Debug, Clone)]
pub struct Dataset {
    class_names: Vec<String>,
    samples: Vec<LabeledSample>,
    name: String,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<LabeledSample>, name: impl Into<String>) -> Result<Self> {
        let k = class_names.len();
        let mut by_class = vec![Vec::new(); k];
        for (i, s) in samples.iter().enumerate() {
            if s.label >= k {
                return Err(Error::Data(format!(
                    "sample `{}` has label {} but the dataset has {k} classes",
                    s.sample_id, s.label
                )));
            }
            by_class[s.label].push(i);
        }
        Ok(Self { class_names, samples, name: name.into(), by_class })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Free-form name (typically the domain or split directory).
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// `(height, width, channels)` of the first sample.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Pools several datasets with identical class lists; sample ids are
    /// prefixed by the source dataset name to stay unique.
    pub fn union(parts: &[&Dataset], name: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Data("union of zero datasets".into()))?;
        let mut samples = Vec::new();
        for ds in parts {
            if ds.class_names != first.class_names {
                return Err(Error::Data(format!(
                    "class lists of `{}` and `{}` differ",
                    first.name, ds.name
                )));
            }
            samples.extend(ds.samples.iter().map(|s| LabeledSample {
                image: s.image.clone(),
                label: s.label,
                sample_id: format!("{}/{}", ds.name, s.sample_id),
            }));
        }
        Dataset::new(first.class_names.clone(), samples, name)
    }

    /// Writes `out/<class_name>/<n>.png`.
    pub fn write_folder(&self, out: &Path) -> Result<()> {
        for class in &self.class_names {
            let dir = out.join(class);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for s in &self.samples {
            let file = s.sample_id.rsplit('/').next().unwrap_or(&s.sample_id);
            let path = out.join(&self.class_names[s.label]).join(format!("{file}.png"));
            s.image.save_png(&path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    fn dir_name(self) -> Option<&'static str> {
        match self {
            Split::Train => Some("train"),
            Split::Val => Some("val"),
            Split::Test => Some("test"),
            Split::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub image_size: usize,
    pub channels: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { image_size: 32, channels: 3 }
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `root/<class_name>/<image files>`; class indices follow sorted class
/// names. When `root/<split>` exists (`train`, `val`, `test`) that directory
/// is used instead of `root`.
pub fn load_folder_dataset(root: &Path, split: Split, opts: LoadOptions) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found")));
    }
    let base = match split.dir_name() {
        Some(d) if root.join(d).is_dir() => root.join(d),
        _ => root.to_path_buf(),
    };
    let class_dirs: Vec<PathBuf> = sorted_entries(&base)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::io(&base, std::io::Error::new(std::io::ErrorKind::NotFound, "no class folders")));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let class_name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()))
                        .unwrap_or(false)
            })
            .collect();
        if files.is_empty() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "empty class folder")));
        }
        for file in files {
            let image = ImageTensor::load(&file, opts.image_size, opts.channels)?;
            let stem = file.file_name().unwrap_or_default().to_string_lossy();
            samples.push(LabeledSample { image, label, sample_id: format!("{class_name}/{stem}") });
        }
        class_names.push(class_name);
    }
    let name = base.file_name().unwrap_or_default().to_string_lossy().into_owned();
    Dataset::new(class_names, samples, name)
}

/// Where an `x_g` came from; enough to regenerate it bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleProvenance {
    pub strategies: Vec<(Strategy, f64)>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Triple {
    pub anchor: LabeledSample,
    pub positive: LabeledSample,
    pub generated: LabeledSample,
    pub label: usize,
    pub provenance: TripleProvenance,
}

#[derive(Debug, Clone)]
pub struct TripleSampler {
    pub triples_per_class: usize,
    pub tag: DatasetTag,
    /// Strategies composed per generated image.
    pub composition_depth: usize,
    /// `None` leaves `x_g` equal to `x_a` (the no-transform baseline).
    pub bank: Option<TransformBank>,
}

impl TripleSampler {
    pub fn new(triples_per_class: usize, tag: DatasetTag, bank: Option<TransformBank>) -> Self {
        Self { triples_per_class, tag, composition_depth: 1, bank }
    }
}

/// Draws `triples_per_class` triples for every class, in class order.
///
/// The positive is uniform over the anchor's class excluding the anchor,
/// falling back to the anchor itself for singleton classes. Positives are
/// not transformed.
pub fn sample_triple_batch<R: Rng + ?Sized>(ds: &Dataset, sampler: &TripleSampler, rng: &mut R) -> Result<Vec<Triple>> {
    if sampler.triples_per_class == 0 {
        return Err(Error::Argument("triples_per_class must be at least 1".into()));
    }
    if let Some(empty) = (0..ds.num_classes()).find(|k| ds.class_indices(*k).is_empty()) {
        return Err(Error::Data(format!("class `{}` has no samples", ds.class_names()[empty])));
    }
    let mut out = Vec::with_capacity(sampler.triples_per_class * ds.num_classes());
    for class in 0..ds.num_classes() {
        let members = ds.class_indices(class);
        for _ in 0..sampler.triples_per_class {
            let a = rng.random_range(0..members.len());
            let p = if members.len() > 1 {
                let j = rng.random_range(0..members.len() - 1);
                if j >= a { j + 1 } else { j }
            } else {
                a
            };
            let anchor = &ds.samples()[members[a]];
            let positive = &ds.samples()[members[p]];
            let mut strategies = Vec::new();
            let mut specs = Vec::new();
            if let Some(bank) = &sampler.bank {
                for _ in 0..sampler.composition_depth {
                    let (spec, m) = bank.sample_strategy(rng, sampler.tag)?;
                    strategies.push((spec.name, m));
                    specs.push((spec, m));
                }
            }
            let noise_seed: u64 = rng.random();
            let image = compose(&anchor.image, &specs, &mut seeded(noise_seed))?;
            out.push(Triple {
                generated: LabeledSample { image, label: class, sample_id: format!("{}#g", anchor.sample_id) },
                anchor: anchor.clone(),
                positive: positive.clone(),
                label: class,
                provenance: TripleProvenance { strategies, noise_seed },
            });
        }
    }
    Ok(out)
}

/// Recomputes `x_g` from a triple's provenance.
pub fn regenerate(anchor: &ImageTensor, provenance: &TripleProvenance, bank: &TransformBank) -> Result<ImageTensor> {
    let specs: Vec<_> = provenance.strategies.iter().map(|(s, m)| (bank.spec(*s).clone(), *m)).collect();
    compose(anchor, &specs, &mut seeded(provenance.noise_seed))
}
