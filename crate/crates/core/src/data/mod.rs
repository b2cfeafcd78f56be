//! Synthetic multimodal dataset generation and dataset files.
//!
//! Training code receives [`Observation`]s only; the ground-truth unimodal
//! sentiments live in a separate column of [`Split`] and are read by
//! evaluation code alone.

mod generate;
mod io;

use std::path::Path;

pub use generate::{generate, BaselineReport, GenSpec};
pub use io::{parse_split, split_to_string};

use crate::error::{Error, Result};

/// What a training run may see of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub id: u64,
    /// Feature vectors indexed by [`crate::Modality::index`].
    pub features: [Vec<f64>; 3],
    pub y: f64,
}

/// Rows of one split: observations and, parallel to them, optional ground truth `(s_a, s_v, s_l)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub observations: Vec<Observation>,
    pub truth: Vec<Option<[f64; 3]>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.observations.iter().map(|o| o.id)
    }

    pub fn has_truth(&self) -> bool {
        !self.truth.is_empty() && self.truth.iter().all(Option::is_some)
    }

    /// Ground truth of every row, or [`Error::TruthUnavailable`] if any row lacks it.
    pub fn truth(&self) -> Result<Vec<[f64; 3]>> {
        self.truth.iter().map(|t| t.ok_or(Error::TruthUnavailable)).collect()
    }

    /// Copy without truth columns.
    pub fn stripped(&self) -> Split {
        Split {
            observations: self.observations.clone(),
            truth: vec![None; self.len()],
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::textio::write_atomic(path, split_to_string(self).as_bytes())
    }

    pub fn load(path: &Path) -> Result<Split> {
        parse_split(&crate::textio::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub const FILES: [&'static str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (split, name) in [&self.train, &self.val, &self.test].into_iter().zip(Self::FILES) {
            split.save(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        Ok(Dataset {
            train: Split::load(&dir.join(Self::FILES[0]))?,
            val: Split::load(&dir.join(Self::FILES[1]))?,
            test: Split::load(&dir.join(Self::FILES[2]))?,
        })
    }

    /// Feature widths (a, v, l) taken from the first training row.
    pub fn feature_dims(&self) -> Result<[usize; 3]> {
        let first = self
            .train
            .observations
            .first()
            .ok_or_else(|| Error::Config("training split is empty".into()))?;
        Ok([0, 1, 2].map(|i| first.features[i].len()))
    }
}
