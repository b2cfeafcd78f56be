use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x.clone(),
        }
    }
}

/// Glorot-uniform `[out, in]` weight and zero `[out]` bias.
pub fn glorot_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    (Tensor::raw(vec![fan_out, fan_in], w), Tensor::zeros(&[fan_out]))
}

/// `x W^T + b` for a batch `x: [n, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    x.matmul(&weight.t()).add_row_vector(bias)
}

/// A stack of fully connected layers stored under `"{prefix}{i}.weight"` / `"{prefix}{i}.bias"`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub activation: Activation,
    /// Apply `activation` after the last layer as well.
    pub activate_output: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, sizes: &[usize], activation: Activation, activate_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        Mlp {
            prefix: prefix.into(),
            sizes: sizes.to_vec(),
            activation,
            activate_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}{layer}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        if self.sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive: {:?}", self.sizes)));
        }
        for (i, pair) in self.sizes.windows(2).enumerate() {
            let (w, b) = glorot_linear(rng, pair[0], pair[1]);
            store.insert(self.weight_name(i), w)?;
            store.insert(self.bias_name(i), b)?;
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "{}: expected input [n, {}], got {:?}",
                self.prefix,
                self.input_dim(),
                x.shape()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = x.clone();
        for i in 0..self.num_layers() {
            h = linear(&h, store.get(&self.weight_name(i))?, store.get(&self.bias_name(i))?);
            if i < last || self.activate_output {
                h = self.activation.apply(&h);
            }
        }
        Ok(h)
    }
}

/// Glorot-initialized store for a plain MLP with the given layer sizes.
pub fn init_params(sizes: &[usize], seed: u64) -> Result<ParamStore> {
    if sizes.len() < 2 {
        return Err(Error::Config("need at least two layer sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    Mlp::new("", sizes, Activation::Relu, false).init(&mut store, &mut rng)?;
    Ok(store)
}

/// Forward pass of an MLP created by [`init_params`]; hidden layers use `activation`.
pub fn mlp_forward(params: &ParamStore, x: &Tensor, activation: Activation) -> Result<Tensor> {
    let mut sizes = Vec::new();
    let mut layer = 0;
    while let Ok(w) = params.get(&format!("{layer}.weight")) {
        if layer == 0 {
            sizes.push(w.shape()[1]);
        }
        sizes.push(w.shape()[0]);
        layer += 1;
    }
    if sizes.is_empty() {
        return Err(Error::Config("parameter store holds no layers".into()));
    }
    Mlp::new("", &sizes, activation, false).forward(params, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params(&[4, 2], 9).unwrap();
        let b = init_params(&[4, 2], 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get("0.weight").unwrap().shape(), &[2, 4]);
        assert_eq!(a.get("0.bias").unwrap().shape(), &[2]);
        assert!(a.get("0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_ne!(a, init_params(&[4, 2], 10).unwrap());
    }

    #[test]
    fn glorot_sample_statistics() {
        // 8x8 layers: bound sqrt(6/16)
        let bound = (6.0f64 / 16.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws = Vec::new();
        while draws.len() < 10_000 {
            let (w, _) = glorot_linear(&mut rng, 8, 8);
            draws.extend_from_slice(w.data());
        }
        let max = draws.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(max <= bound && bound - max < 0.01, "max {max}");
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = ParamStore::new();
        p.insert(
            "0.weight",
            Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        )
        .unwrap();
        p.insert("0.bias", Tensor::zeros(&[3])).unwrap();
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        assert_eq!(mlp_forward(&p, &x, Activation::Relu).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = init_params(&[3, 5, 2], 4).unwrap();
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let shape = p.get(&n).unwrap().shape().to_vec();
            p.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        let x = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(mlp_forward(&p, &x, Activation::Relu).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = init_params(&[3, 2], 1).unwrap();
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(mlp_forward(&p, &x, Activation::Relu), Err(Error::Shape(_))));
    }

    /// Straight-line reimplementation over plain vectors.
    fn reference_forward(p: &ParamStore, x: &[f64], sizes: &[usize]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..sizes.len() - 1 {
            let w = p.get(&format!("{l}.weight")).unwrap().data();
            let b = p.get(&format!("{l}.bias")).unwrap().data();
            let (i_n, o_n) = (sizes[l], sizes[l + 1]);
            let mut next = vec![0.0; o_n];
            for o in 0..o_n {
                let mut acc = b[o];
                for i in 0..i_n {
                    acc += w[o * i_n + i] * h[i];
                }
                next[o] = if l + 2 < sizes.len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        h
    }

    #[test]
    fn forward_matches_reference() {
        let sizes = [5, 7, 6, 3];
        let mut p = init_params(&sizes, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for l in 0..3 {
            let n = format!("{l}.bias");
            let len = sizes[l + 1];
            p.set(
                &n,
                Tensor::new(&[len], (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
            )
            .unwrap();
        }
        let xs: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor::new(&[4, 5], xs.clone()).unwrap();
        let y = mlp_forward(&p, &x, Activation::Relu).unwrap();
        for r in 0..4 {
            let want = reference_forward(&p, &xs[r * 5..(r + 1) * 5], &sizes);
            for (a, b) in y.data()[r * 3..(r + 1) * 3].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let sizes = [3, 4, 1];
        let p = init_params(&sizes, 5).unwrap();
        let x = Tensor::new(&[2, 3], vec![0.3, -0.7, 1.1, 0.9, 0.2, -0.4]).unwrap();
        let target = Tensor::column(&[0.5, -0.25]);
        let loss_of = |store: &ParamStore| {
            mlp_forward(store, &x, Activation::Tanh)
                .unwrap()
                .sub(&target)
                .mul(&target)
                .sum()
        };
        let g = Graph::new();
        let attached = p.attach(&g);
        let grads = attached.gradients(&loss_of(&attached)).unwrap();
        let h = 1e-5;
        for (name, t) in p.iter() {
            for i in 0..t.numel() {
                let mut up = t.to_vec();
                let mut dn = t.to_vec();
                up[i] += h;
                dn[i] -= h;
                let mut pu = p.clone();
                pu.set(name, Tensor::new(t.shape(), up).unwrap()).unwrap();
                let mut pd = p.clone();
                pd.set(name, Tensor::new(t.shape(), dn).unwrap()).unwrap();
                let fd = (loss_of(&pu).item() - loss_of(&pd).item()) / (2.0 * h);
                let an = grads[name].data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "{name}[{i}] {an} vs {fd}"
                );
            }
        }
    }
}
