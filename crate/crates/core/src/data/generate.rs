use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Observation, Split};
use crate::error::{Error, Result};
use crate::modality::Modality;

/// Parameters of the synthetic multimodal regression task.
///
/// Each sample has a shared base sentiment `s`; every modality sees its own
/// perturbed copy `s_m`, and the annotated label `y` is a weighted mix of the
/// `s_m`. The gap between `y` and `s_m` is what unimodal label learning has to
/// close.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Feature width per modality (a, v, l), distractor dims included.
    pub feature_dims: [usize; 3],
    pub rho: f64,
    /// Std of the per-modality drift `s_m - s`.
    pub sigma_inc: f64,
    /// Label mixing weights (a, v, l).
    pub weights: [f64; 3],
    pub sigma_y: f64,
    pub sigma_x: f64,
    /// Pure-noise feature columns per modality.
    pub distractor_dims: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_train: 1284,
            n_val: 229,
            n_test: 686,
            feature_dims: [16, 16, 32],
            rho: 3.0,
            sigma_inc: 0.8,
            weights: [0.2, 0.2, 0.6],
            sigma_y: 0.1,
            sigma_x: 0.05,
            distractor_dims: 8,
            seed: 1111,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_train == 0 {
            return bad("n_train must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return bad(format!("label weights must be nonnegative: {:?}", self.weights));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("label weights must sum to 1, got {total}"));
        }
        for (name, s) in [
            ("sigma_inc", self.sigma_inc),
            ("sigma_y", self.sigma_y),
            ("sigma_x", self.sigma_x),
        ] {
            if s < 0.0 || !s.is_finite() {
                return bad(format!("{name} must be >= 0, got {s}"));
            }
        }
        for (m, &d) in Modality::ALL.iter().zip(&self.feature_dims) {
            if d <= self.distractor_dims {
                return bad(format!(
                    "feature dim of modality {m} ({d}) must exceed distractor dims ({})",
                    self.distractor_dims
                ));
            }
        }
        Ok(())
    }
}

/// Mean `|s_m - y|` per modality: the error of copying the multimodal label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub train: [f64; 3],
    pub val: [f64; 3],
    pub test: [f64; 3],
}

fn phi(s: f64) -> [f64; 4] {
    [s, s * s, (2.0 * s).sin(), (3.0 * s).cos()]
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Fixed mixing matrices `A_m` of shape `[informative, 4]`, row-major.
fn mixing_matrices(spec: &GenSpec) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    Modality::ALL.map(|m| {
        let rows = spec.feature_dims[m.index()] - spec.distractor_dims;
        (0..rows * 4).map(|_| 0.5 * normal(&mut rng)).collect()
    })
}

fn sample(spec: &GenSpec, mixing: &[Vec<f64>; 3], id: u64) -> (Observation, [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(id + 1);
    let rho = spec.rho;
    let base = rng.random_range(-rho..rho);
    let mut truth = [0.0; 3];
    for t in truth.iter_mut() {
        *t = (base + spec.sigma_inc * normal(&mut rng)).clamp(-rho, rho);
    }
    let mixed: f64 = truth.iter().zip(&spec.weights).map(|(s, w)| s * w).sum();
    let y = (mixed + spec.sigma_y * normal(&mut rng)).clamp(-rho, rho);

    let features = Modality::ALL.map(|m| {
        let i = m.index();
        let f = phi(truth[i]);
        let a = &mixing[i];
        let informative = spec.feature_dims[i] - spec.distractor_dims;
        let mut x = Vec::with_capacity(spec.feature_dims[i]);
        for r in 0..informative {
            let clean: f64 = (0..4).map(|c| a[r * 4 + c] * f[c]).sum();
            x.push(clean + spec.sigma_x * normal(&mut rng));
        }
        for _ in 0..spec.distractor_dims {
            x.push(normal(&mut rng));
        }
        x
    });
    (Observation { id, features, y }, truth)
}

fn baseline(split: &Split) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (obs, truth) in split.observations.iter().zip(&split.truth) {
        if let Some(s) = truth {
            for m in 0..3 {
                acc[m] += (s[m] - obs.y).abs();
            }
            n += 1;
        }
    }
    acc.map(|a| if n == 0 { f64::NAN } else { a / n as f64 })
}

/// Draws the three splits. Sample ids run consecutively over train, val, test.
pub fn generate(spec: &GenSpec) -> Result<(Dataset, BaselineReport)> {
    spec.validate()?;
    let mixing = mixing_matrices(spec);
    let mut next_id = 0u64;
    let mut make = |n: usize| {
        let mut split = Split::default();
        for _ in 0..n {
            let (obs, truth) = sample(spec, &mixing, next_id);
            split.observations.push(obs);
            split.truth.push(Some(truth));
            next_id += 1;
        }
        split
    };
    let train = make(spec.n_train);
    let val = make(spec.n_val);
    let test = make(spec.n_test);
    let report = BaselineReport {
        train: baseline(&train),
        val: baseline(&val),
        test: baseline(&test),
    };
    Ok((Dataset { train, val, test }, report))
}
