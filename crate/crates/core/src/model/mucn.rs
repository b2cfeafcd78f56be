use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{Activation, Mlp, ParamStore};

/// Label-correction network for one modality.
///
/// `concat(x, label) -> FC -> ReLU -> FC -> ReLU -> FC -> y'`, then the
/// residual output `rho * tanh(label + y')`, which lies strictly inside
/// `(-rho, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mucn {
    pub modality: Modality,
    pub rho: f64,
    mlp: Mlp,
}

impl Mucn {
    pub fn new(modality: Modality, rep_dim: usize, rho: f64) -> Result<Self> {
        if rep_dim == 0 {
            return Err(Error::Config("MUCN representation width must be positive".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        let mlp = Mlp::new(
            format!("mucn_{modality}."),
            &[rep_dim + 1, rep_dim, rep_dim, 1],
            Activation::Relu,
            false,
        );
        Ok(Mucn { modality, rho, mlp })
    }

    pub fn rep_dim(&self) -> usize {
        self.mlp.input_dim() - 1
    }

    /// Glorot init with the output layer zeroed, so an untrained network
    /// returns `rho * tanh(label)`.
    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.mlp.init(&mut store, rng)?;
        let last = self.mlp.num_layers() - 1;
        let w = self.mlp.weight_name(last);
        let shape = store.get(&w)?.shape().to_vec();
        store.set(&w, Tensor::zeros(&shape))?;
        Ok(store)
    }

    pub fn head_names(&self) -> (String, String) {
        let last = self.mlp.num_layers() - 1;
        (self.mlp.weight_name(last), self.mlp.bias_name(last))
    }

    /// Corrected labels `[n, 1]` for representations `x_rep: [n, d_m]` and input labels `[n, 1]`.
    pub fn forward(&self, p: &ParamStore, x_rep: &Tensor, label_in: &Tensor) -> Result<Tensor> {
        if label_in.shape().len() != 2 || label_in.cols() != 1 {
            return Err(Error::shape(format!("labels must be [n, 1], got {:?}", label_in.shape())));
        }
        if x_rep.shape().len() != 2 || x_rep.cols() != self.rep_dim() || x_rep.rows() != label_in.rows() {
            return Err(Error::shape(format!(
                "MUCN_{}: representation {:?} incompatible with [{}, {}]",
                self.modality,
                x_rep.shape(),
                label_in.rows(),
                self.rep_dim()
            )));
        }
        if let Some(v) = label_in.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("MUCN_{} input label", self.modality),
                format!("{v}"),
            ));
        }
        let input = Tensor::concat_cols(&[x_rep, label_in]);
        let residual = self.mlp.forward(p, &input)?;
        Ok(label_in.add(&residual).tanh().scale(self.rho))
    }
}
