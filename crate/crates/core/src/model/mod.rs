//! The network: unimodal encoders, fusion, predictors, projection module and
//! the label-correction network.

mod embeddings;
mod mucn;

use rand::Rng;

pub use embeddings::{export_embeddings, EmbeddingKind};
pub use mucn::Mucn;

use crate::autodiff::Tensor;
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{Activation, Mlp, ParamStore};

/// Layer widths of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    /// Raw feature widths d'_m (a, v, l).
    pub input: [usize; 3],
    /// Unimodal embedding widths d_m (a, v, l).
    pub unimodal: [usize; 3],
    /// Fused representation width d.
    pub fusion: usize,
    pub fusion_hidden: usize,
    pub predictor_hidden: usize,
}

impl ModelDims {
    /// Fusion hidden and predictor hidden widths follow `2d` and `d`.
    pub fn new(input: [usize; 3], unimodal: [usize; 3], fusion: usize) -> Self {
        ModelDims {
            input,
            unimodal,
            fusion,
            fusion_hidden: 2 * fusion,
            predictor_hidden: fusion,
        }
    }
}

/// Architecture description; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct MugModel {
    pub dims: ModelDims,
    encoders: [Mlp; 3],
    fusion: Mlp,
    head: Mlp,
    uni_heads: [Mlp; 3],
    projections: [Mlp; 3],
}

/// Stacked per-batch inputs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<u64>,
    pub features: [Tensor; 3],
    /// `[n, 1]`
    pub y: Tensor,
}

impl Batch {
    pub fn new(rows: &[&Observation]) -> Result<Batch> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let features = Modality::ALL.map(|m| {
            let i = m.index();
            let width = rows[0].features[i].len();
            let mut data = Vec::with_capacity(rows.len() * width);
            for r in rows {
                data.extend_from_slice(&r.features[i]);
            }
            (width, data)
        });
        let mut out = Vec::with_capacity(3);
        for (width, data) in features {
            if data.len() != rows.len() * width {
                return Err(Error::shape("ragged feature rows in batch"));
            }
            out.push(Tensor::new(&[rows.len(), width], data)?);
        }
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        Ok(Batch {
            ids: rows.iter().map(|r| r.id).collect(),
            features: [out[0].clone(), out[1].clone(), out[2].clone()],
            y: Tensor::new(&[rows.len(), 1], y)?,
        })
    }

    pub fn from_slice(rows: &[Observation]) -> Result<Batch> {
        let refs: Vec<&Observation> = rows.iter().collect();
        Batch::new(&refs)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Everything the forward pass of one batch produces.
#[derive(Clone, Debug)]
pub struct Forward {
    /// x_m per modality, `[n, d_m]`.
    pub unimodal: [Tensor; 3],
    /// x, `[n, d]`.
    pub fused: Tensor,
    /// ŷ, `[n, 1]`.
    pub prediction: Tensor,
}

impl MugModel {
    pub fn new(dims: ModelDims) -> Result<Self> {
        let all = dims
            .input
            .iter()
            .chain(&dims.unimodal)
            .chain([&dims.fusion, &dims.fusion_hidden, &dims.predictor_hidden]);
        if all.into_iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("model dimensions must be positive: {dims:?}")));
        }
        let d = dims.fusion;
        let encoders = Modality::ALL.map(|m| {
            let (i, o) = (dims.input[m.index()], dims.unimodal[m.index()]);
            Mlp::new(format!("enc_{m}."), &[i, o, o, o], Activation::Relu, true)
        });
        let concat: usize = dims.unimodal.iter().sum();
        let fusion = Mlp::new("fusion.", &[concat, dims.fusion_hidden, d], Activation::Relu, false);
        let head = Mlp::new("head_M.", &[d, dims.predictor_hidden, 1], Activation::Relu, false);
        let uni_heads = Modality::ALL.map(|m| {
            Mlp::new(
                format!("head_{m}."),
                &[dims.unimodal[m.index()], dims.predictor_hidden, 1],
                Activation::Relu,
                false,
            )
        });
        let projections =
            Modality::ALL.map(|m| Mlp::new(format!("cpm_{m}."), &[d, dims.unimodal[m.index()]], Activation::Relu, true));
        Ok(MugModel {
            dims,
            encoders,
            fusion,
            head,
            uni_heads,
            projections,
        })
    }

    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for mlp in self.encoders.iter() {
            mlp.init(&mut store, rng)?;
        }
        self.fusion.init(&mut store, rng)?;
        self.head.init(&mut store, rng)?;
        for mlp in self.uni_heads.iter().chain(&self.projections) {
            mlp.init(&mut store, rng)?;
        }
        Ok(store)
    }

    /// x_m = F^m(features_m) for every modality.
    pub fn encode(&self, p: &ParamStore, features: &[Tensor; 3]) -> Result<[Tensor; 3]> {
        let a = self.encoders[0].forward(p, &features[0])?;
        let v = self.encoders[1].forward(p, &features[1])?;
        let l = self.encoders[2].forward(p, &features[2])?;
        Ok([a, v, l])
    }

    /// x = F^M(x_a, x_v, x_l) and ŷ = P^M(x).
    pub fn fuse_predict(&self, p: &ParamStore, unimodal: &[Tensor; 3]) -> Result<(Tensor, Tensor)> {
        for m in Modality::ALL {
            let x = &unimodal[m.index()];
            if x.shape().len() != 2 || x.cols() != self.dims.unimodal[m.index()] {
                return Err(Error::shape(format!(
                    "embedding of modality {m} has shape {:?}, expected [n, {}]",
                    x.shape(),
                    self.dims.unimodal[m.index()]
                )));
            }
        }
        let n = unimodal[0].rows();
        if unimodal.iter().any(|x| x.rows() != n) {
            return Err(Error::shape("embeddings disagree on batch size"));
        }
        let concat = Tensor::concat_cols(&[&unimodal[0], &unimodal[1], &unimodal[2]]);
        let fused = self.fusion.forward(p, &concat)?;
        let prediction = self.head.forward(p, &fused)?;
        Ok((fused, prediction))
    }

    /// x_{m'} = f(W_m x + b_m).
    pub fn project(&self, p: &ParamStore, fused: &Tensor, m: Modality) -> Result<Tensor> {
        self.projections[m.index()].forward(p, fused)
    }

    /// P^m applied to either x_m or x_{m'}.
    pub fn predict_unimodal(&self, p: &ParamStore, x: &Tensor, m: Modality) -> Result<Tensor> {
        self.uni_heads[m.index()].forward(p, x)
    }

    pub fn forward(&self, p: &ParamStore, batch: &Batch) -> Result<Forward> {
        let unimodal = self.encode(p, &batch.features)?;
        let (fused, prediction) = self.fuse_predict(p, &unimodal)?;
        Ok(Forward {
            unimodal,
            fused,
            prediction,
        })
    }

    pub fn encoder(&self, m: Modality) -> &Mlp {
        &self.encoders[m.index()]
    }

    pub fn unimodal_head(&self, m: Modality) -> &Mlp {
        &self.uni_heads[m.index()]
    }

    pub fn multimodal_head(&self) -> &Mlp {
        &self.head
    }
}
