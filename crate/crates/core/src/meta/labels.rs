use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::textio::{fmt_f64, read_to_string, write_atomic};

/// File column order after `id,y`.
const COLUMN_ORDER: [Modality; 3] = [Modality::Language, Modality::Acoustic, Modality::Visual];
const HEADER: &str = "id,y,y_lc,y_ac,y_vc";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelRow {
    pub y: f64,
    /// Corrected labels indexed by [`Modality::index`].
    pub corrected: [f64; 3],
}

/// Corrected unimodal labels for every training sample, keyed by id.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelStore {
    pub rho: f64,
    rows: BTreeMap<u64, LabelRow>,
}

impl LabelStore {
    /// Fails on duplicate ids, non-finite values or a corrected label outside `(-rho, rho)`.
    pub fn from_rows(rho: f64, rows: impl IntoIterator<Item = (u64, f64, [f64; 3])>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, y, corrected) in rows {
            if !y.is_finite() || corrected.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("label row {id}"), "non-finite value"));
            }
            if let Some(v) = corrected.iter().find(|v| v.abs() >= rho) {
                return Err(Error::Config(format!(
                    "corrected label {v} of sample {id} is outside (-{rho}, {rho})"
                )));
            }
            if map.insert(id, LabelRow { y, corrected }).is_some() {
                return Err(Error::Config(format!("duplicate label row for sample {id}")));
            }
        }
        Ok(LabelStore { rho, rows: map })
    }

    /// The store that assigns every modality its multimodal label.
    pub fn copy_of_y(rho: f64, rows: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let clamp = |y: f64| {
            let edge = rho * (1.0 - f64::EPSILON);
            y.clamp(-edge, edge)
        };
        LabelStore::from_rows(rho, rows.into_iter().map(|(id, y)| (id, y, [clamp(y); 3])))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u64) -> Result<&LabelRow> {
        self.rows.get(&id).ok_or(Error::MissingLabel(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &LabelRow)> {
        self.rows.iter().map(|(k, v)| (*k, v))
    }

    /// Corrected-label columns `[n, 1]` per modality for the given ids.
    pub fn targets(&self, ids: &[u64]) -> Result<[Tensor; 3]> {
        let mut cols: [Vec<f64>; 3] = Default::default();
        for &id in ids {
            let row = self.get(id)?;
            for (col, v) in cols.iter_mut().zip(row.corrected) {
                col.push(v);
            }
        }
        let [a, v, l] = cols;
        Ok([Tensor::column(&a), Tensor::column(&v), Tensor::column(&l)])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (id, row) in &self.rows {
            out.push_str(&format!("{id},{}", fmt_f64(row.y)));
            for m in COLUMN_ORDER {
                out.push(',');
                out.push_str(&fmt_f64(row.corrected[m.index()]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(rho: f64, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header `{HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, found {}", fields.len())));
            }
            let id: u64 = fields[0].parse().map_err(|e| parse_err(format!("bad id: {e}")))?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(format!("bad value `{s}`: {e}")));
            let y = num(fields[1])?;
            let mut corrected = [0.0; 3];
            for (m, s) in COLUMN_ORDER.iter().zip(&fields[2..]) {
                corrected[m.index()] = num(s)?;
            }
            rows.push((id, y, corrected));
        }
        LabelStore::from_rows(rho, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(rho: f64, path: &Path) -> Result<Self> {
        LabelStore::from_csv(rho, &read_to_string(path)?)
    }
}
