//! Datasets: seeded 2-D generators, an IDX reader for small image corpora,
//! and seeded mini-batch iteration.

mod idx;
mod synth;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::rng;

pub use idx::{load_idx_dataset, read_idx, read_idx_bytes, write_idx, IdxArray, IdxKind};
pub use synth::{gen_gaussians, gen_rings};

/// Value range of the inputs, which decides whether attacks clip to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Box01,
    Unconstrained,
}

impl Domain {
    pub fn clip(self, v: f64) -> f64 {
        match self {
            Domain::Box01 => v.clamp(0.0, 1.0),
            Domain::Unconstrained => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub domain: Domain,
    pub id: String,
    /// Reference perturbation budget for this data.
    pub base_eps: f64,
    /// Non-fatal issues noticed while building the data.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<usize>, classes: usize, domain: Domain, id: impl Into<String>, base_eps: f64) -> Result<Self> {
        if x.rank() != 2 || x.rows() != labels.len() {
            return Err(Error::shape("dataset", x.shape(), &[labels.len()]));
        }
        crate::training::loss::check_labels(&labels, classes)?;
        if domain == Domain::Box01 && x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("box01 dataset has coordinates outside [0, 1]".into()));
        }
        Ok(Dataset {
            x,
            labels,
            classes,
            domain,
            id: id.into(),
            base_eps,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            domain: self.domain,
            id: self.id.clone(),
            base_eps: self.base_eps,
            warnings: self.warnings.clone(),
        }
    }

    /// Write `x0,...,x{d-1},label` rows with a header.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (row, y) in self.x.row_iter().zip(&self.labels) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(out, "{},{y}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read the format written by [`Dataset::write_csv`].
    pub fn read_csv(text: &str, classes: usize, domain: Domain, id: &str, base_eps: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or(Error::EmptyDataset)?;
        let dim = header.split(',').count().saturating_sub(1);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |detail: String| Error::Config {
                path: format!("{id}:row {}", n + 1),
                detail,
            };
            if cells.len() != dim + 1 {
                return Err(bad(format!("expected {} columns, found {}", dim + 1, cells.len())));
            }
            for c in &cells[..dim] {
                data.push(c.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
            labels.push(cells[dim].parse::<usize>().map_err(|e| bad(e.to_string()))?);
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Dataset::new(Tensor::matrix(labels.len(), dim, data)?, labels, classes, domain, id, base_eps)
    }
}

/// Shuffled mini-batches of indices for one epoch. The permutation depends
/// only on `(seed, epoch)`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_rng(seed, rng::stream::SHUFFLE, epoch as u64));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Deterministic split into `(first, second)` with `first_len` examples in the
/// first part.
pub fn split(dataset: &Dataset, first_len: usize, seed: u64) -> (Dataset, Dataset) {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream_rng(seed, rng::stream::SPLIT, 0));
    let (a, b) = order.split_at(first_len.min(order.len()));
    (dataset.subset(a), dataset.subset(b))
}
