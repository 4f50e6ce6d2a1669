//! Embedding export: one CSV row per sample with both feature halves.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::probe::extract_pairs;

/// Header `sample_id, label, domain_tag, fc_0.., fb_0..`.
pub fn embedding_header(half: usize) -> Vec<String> {
    let mut h = vec!["sample_id".to_string(), "label".to_string(), "domain_tag".to_string()];
    h.extend((0..half).map(|i| format!("fc_{i}")));
    h.extend((0..half).map(|i| format!("fb_{i}")));
    h
}

/// Writes frozen features of `ds` to `out`; `domain_tag` is the dataset name.
pub fn export_embeddings(model: &Model, ds: &Dataset, out: &Path) -> Result<usize> {
    let pairs = extract_pairs(model, ds)?;
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(embedding_header(model.config().half_dim()))?;
    for (s, p) in ds.samples().iter().zip(&pairs) {
        let mut row = vec![s.sample_id.clone(), s.label.to_string(), ds.name().to_string()];
        row.extend(p.f_c.iter().chain(&p.f_b).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(pairs.len())
}
