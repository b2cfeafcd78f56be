//! Per-sample export of unimodal and projected embeddings:
//! `id,modality,kind,v_0,...,v_{d_m-1}` with `kind` in `uni|proj`.

use super::{Batch, MugModel};
use crate::data::Observation;
use crate::error::Result;
use crate::modality::Modality;
use crate::nn::ParamStore;
use crate::textio::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Unimodal,
    Projected,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Unimodal => "uni",
            EmbeddingKind::Projected => "proj",
        }
    }
}

pub fn export_embeddings(model: &MugModel, params: &ParamStore, rows: &[Observation]) -> Result<String> {
    let batch = Batch::from_slice(rows)?;
    let fwd = model.forward(params, &batch)?;
    let mut out = String::new();
    for m in Modality::ALL {
        let uni = &fwd.unimodal[m.index()];
        let proj = model.project(params, &fwd.fused, m)?;
        let width = uni.cols();
        for (r, id) in batch.ids.iter().enumerate() {
            for (kind, t) in [(EmbeddingKind::Unimodal, uni), (EmbeddingKind::Projected, &proj)] {
                out.push_str(&format!("{id},{m},{}", kind.as_str()));
                for v in &t.data()[r * width..(r + 1) * width] {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}
