//! Training objectives of the three stages.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::meta::LabelStore;
use crate::modality::Modality;
use crate::model::{Batch, Forward, MugModel};
use crate::nn::ParamStore;

const NORM_FLOOR: f64 = 1e-12;

/// Mean absolute error between two equally shaped tensors.
pub fn mae(preds: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if preds.numel() == 0 || labels.numel() == 0 {
        return Err(Error::EmptyBatch);
    }
    if preds.shape() != labels.shape() {
        return Err(Error::shape(format!(
            "mae: predictions {:?} vs labels {:?}",
            preds.shape(),
            labels.shape()
        )));
    }
    Ok(preds.sub(labels).abs().mean())
}

fn check_matrix(x: &Tensor, what: &str) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::shape(format!("{what} must be a matrix, got {:?}", x.shape())));
    }
    Ok(())
}

fn row_norms(x: &Tensor) -> Tensor {
    x.mul(x).sum_cols().sqrt()
}

/// Row-wise L2 normalization. Fails with [`Error::ZeroVector`] on any row whose norm is below 1e-12.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    check_matrix(x, "l2_normalize input")?;
    let norms = row_norms(x);
    if norms.data().iter().any(|&n| n <= NORM_FLOOR) {
        return Err(Error::ZeroVector);
    }
    Ok(x.div(&norms.broadcast_cols(x.cols())))
}

/// `x / max(‖x‖, 1e-12)` per row; zero rows stay zero instead of failing.
pub fn l2_normalize_clamped(x: &Tensor) -> Result<Tensor> {
    check_matrix(x, "l2_normalize input")?;
    let norms = row_norms(x);
    let lift = norms.mask(|n| if n < NORM_FLOOR { NORM_FLOOR - n } else { 0.0 });
    Ok(x.div(&norms.add(&lift).broadcast_cols(x.cols())))
}

/// InfoNCE between projected rows and unimodal rows, positives on the diagonal.
///
/// Both inputs are expected to be row-normalized. The unimodal side is
/// detached so gradients reach `x_proj` only.
pub fn contrastive_loss(x_proj: &Tensor, x_uni: &Tensor, tau: f64) -> Result<Tensor> {
    check_matrix(x_proj, "projected embeddings")?;
    if x_proj.shape() != x_uni.shape() {
        return Err(Error::shape(format!(
            "contrastive_loss: {:?} vs {:?}",
            x_proj.shape(),
            x_uni.shape()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = x_proj.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let logits = x_proj.matmul(&x_uni.detach().t()).scale(1.0 / tau);
    // shift by a constant row max before exponentiating
    let max: Vec<f64> = logits
        .data()
        .chunks_exact(n)
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let max = Tensor::new(&[n, 1], max)?;
    let lse = logits.sub(&max.broadcast_cols(n)).exp().sum_cols().ln().add(&max);
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let diag = logits.mul(&Tensor::new(&[n, n], eye)?).sum_cols();
    Ok(lse.sub(&diag).mean())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Weights {
    /// Weight of the projected-prediction losses.
    pub eta: f64,
    /// Weight of the contrastive losses.
    pub gamma: f64,
    pub tau: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Stage1Weights {
            eta: 0.01,
            gamma: 0.01,
            tau: 1.0,
        }
    }
}

impl Stage1Weights {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 || self.eta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!("invalid stage-1 weights {self:?}")));
        }
        Ok(())
    }
}

/// Stage-1 loss and its parts.
#[derive(Clone, Debug)]
pub struct Stage1Loss {
    pub total: Tensor,
    pub multimodal: Tensor,
    /// MAE of `P^m(x_{m'})` against `y`, per modality.
    pub projected: [Tensor; 3],
    pub contrastive: [Tensor; 3],
    pub forward: Forward,
}

pub fn stage1_loss(model: &MugModel, p: &ParamStore, batch: &Batch, w: &Stage1Weights) -> Result<Stage1Loss> {
    w.validate()?;
    let forward = model.forward(p, batch)?;
    let multimodal = mae(&forward.prediction, &batch.y)?;
    let mut projected = Vec::with_capacity(3);
    let mut contrastive = Vec::with_capacity(3);
    let mut total = multimodal.clone();
    for m in Modality::ALL {
        let x_proj = model.project(p, &forward.fused, m)?;
        let y_proj = model.predict_unimodal(p, &x_proj, m)?;
        let l_proj = mae(&y_proj, &batch.y)?;
        let l_con = contrastive_loss(
            &l2_normalize_clamped(&x_proj)?,
            &l2_normalize_clamped(&forward.unimodal[m.index()])?,
            w.tau,
        )?;
        if w.eta != 0.0 {
            total = total.add(&l_proj.scale(w.eta));
        }
        if w.gamma != 0.0 {
            total = total.add(&l_con.scale(w.gamma));
        }
        projected.push(l_proj);
        contrastive.push(l_con);
    }
    let [pa, pv, pl]: [Tensor; 3] = projected.try_into().expect("three modalities");
    let [ca, cv, cl]: [Tensor; 3] = contrastive.try_into().expect("three modalities");
    Ok(Stage1Loss {
        total,
        multimodal,
        projected: [pa, pv, pl],
        contrastive: [ca, cv, cl],
        forward,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage3Weights {
    /// Weight of each unimodal regression task.
    pub beta: f64,
}

impl Default for Stage3Weights {
    fn default() -> Self {
        Stage3Weights { beta: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct Stage3Loss {
    pub total: Tensor,
    pub multimodal: Tensor,
    /// MAE of `P^m(x_m)` against the corrected labels, per modality.
    pub unimodal: [Tensor; 3],
    pub forward: Forward,
}

pub fn stage3_loss(
    model: &MugModel,
    p: &ParamStore,
    batch: &Batch,
    labels: &LabelStore,
    w: &Stage3Weights,
) -> Result<Stage3Loss> {
    if w.beta < 0.0 {
        return Err(Error::Config(format!("beta must be >= 0, got {}", w.beta)));
    }
    let targets = labels.targets(&batch.ids)?;
    let forward = model.forward(p, batch)?;
    let multimodal = mae(&forward.prediction, &batch.y)?;
    let mut total = multimodal.clone();
    let mut unimodal = Vec::with_capacity(3);
    for m in Modality::ALL {
        let pred = model.predict_unimodal(p, &forward.unimodal[m.index()], m)?;
        let l = mae(&pred, &targets[m.index()])?;
        if w.beta != 0.0 {
            total = total.add(&l.scale(w.beta));
        }
        unimodal.push(l);
    }
    let [a, v, l]: [Tensor; 3] = unimodal.try_into().expect("three modalities");
    Ok(Stage3Loss {
        total,
        multimodal,
        unimodal: [a, v, l],
        forward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad, Graph};
    use crate::data::{generate, GenSpec, Observation};
    use crate::model::ModelDims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
        Tensor::new(&[n, k], (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mae_cases() {
        let p = Tensor::column(&[1.0, -1.0]);
        let z = Tensor::column(&[0.0, 0.0]);
        assert_eq!(mae(&p, &z).unwrap().item(), 1.0);
        assert_eq!(mae(&p, &p).unwrap().item(), 0.0);
        assert!(matches!(
            mae(&Tensor::zeros(&[0, 1]), &Tensor::zeros(&[0, 1])),
            Err(Error::EmptyBatch)
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let expected = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 64.0;
        let got = mae(&Tensor::column(&a), &Tensor::column(&b)).unwrap().item();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn normalize_cases() {
        let v = l2_normalize(&Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        assert!((v.data()[0] - 0.6).abs() < 1e-15 && (v.data()[1] - 0.8).abs() < 1e-15);
        let e = Tensor::new(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_normalize(&e).unwrap(), e);
        assert!(matches!(l2_normalize(&Tensor::zeros(&[2, 3])), Err(Error::ZeroVector)));
        assert_eq!(l2_normalize_clamped(&Tensor::zeros(&[2, 3])).unwrap(), Tensor::zeros(&[2, 3]));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 5, 16);
        let y = l2_normalize(&x).unwrap();
        for row in y.data().chunks(16) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    fn e1e2() -> Tensor {
        Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn contrastive_closed_forms() {
        let one = Tensor::new(&[1, 3], vec![0.0, 0.6, 0.8]).unwrap();
        assert_eq!(contrastive_loss(&one, &one, 1.0).unwrap().item(), 0.0);
        let x = e1e2();
        let l1 = contrastive_loss(&x, &x, 1.0).unwrap().item();
        assert!((l1 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l1 - 0.31326).abs() < 1e-5);
        let l2 = contrastive_loss(&x, &x, 0.5).unwrap().item();
        assert!((l2 - 0.12693).abs() < 1e-5);
        assert!(contrastive_loss(&x, &Tensor::zeros(&[3, 2]), 1.0).is_err());
    }

    #[test]
    fn contrastive_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = l2_normalize(&random_matrix(&mut rng, 6, 5)).unwrap();
        let b = l2_normalize(&random_matrix(&mut rng, 6, 5)).unwrap();
        let tau = 0.7;
        let dot = |i: usize, j: usize| (0..5).map(|k| a.data()[i * 5 + k] * b.data()[j * 5 + k]).sum::<f64>() / tau;
        let mut expected = 0.0;
        for j in 0..6 {
            let denom: f64 = (0..6).map(|g| dot(j, g).exp()).sum();
            expected -= (dot(j, j).exp() / denom).ln();
        }
        expected /= 6.0;
        let got = contrastive_loss(&a, &b, tau).unwrap().item();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn contrastive_stops_unimodal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 4, 3);
        let g = Graph::new();
        let (la, lb) = (g.leaf(&a), g.leaf(&b));
        let loss = contrastive_loss(&l2_normalize(&la).unwrap(), &l2_normalize(&lb).unwrap(), 1.0).unwrap();
        let d = grad(&loss, &[la, lb], false).unwrap();
        assert!(d[1].data().iter().all(|&v| v == 0.0));
        assert!(d[0].data().iter().any(|&v| v != 0.0));
        // but the loss does depend on b
        let f = |bv: &Tensor| {
            contrastive_loss(&l2_normalize(&a).unwrap(), &l2_normalize(bv).unwrap(), 1.0)
                .unwrap()
                .item()
        };
        let mut bumped = b.to_vec();
        bumped[0] += 1e-5;
        let sens = (f(&Tensor::new(&[4, 3], bumped).unwrap()) - f(&b)) / 1e-5;
        assert!(sens.abs() > 1e-8);
    }

    #[test]
    fn contrastive_decreases_with_positive_similarity() {
        // rows of b are fixed; moving a_0 toward b_0 lowers the loss
        let b = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let t = step as f64 / 10.0 * std::f64::consts::FRAC_PI_2;
            let a = Tensor::new(&[3, 2], vec![t.sin(), t.cos(), 0.0, 1.0, -1.0, 0.0]).unwrap();
            let l = contrastive_loss(&a, &b, 1.0).unwrap().item();
            assert!(l < prev);
            prev = l;
        }
    }

    fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
        x.gather_rows(perm)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn contrastive_nonnegative_and_permutation_invariant(seed in 0u64..10_000, n in 1usize..7, tau in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = l2_normalize_clamped(&random_matrix(&mut rng, n, 4)).unwrap();
            let b = l2_normalize_clamped(&random_matrix(&mut rng, n, 4)).unwrap();
            let l = contrastive_loss(&a, &b, tau).unwrap().item();
            prop_assert!(l >= 0.0);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            let lp = contrastive_loss(&permute_rows(&a, &perm), &permute_rows(&b, &perm), tau).unwrap().item();
            prop_assert!((l - lp).abs() < 1e-12);
        }
    }

    fn setup() -> (MugModel, ParamStore, Vec<Observation>) {
        let spec = GenSpec {
            n_train: 12,
            n_val: 1,
            n_test: 1,
            ..GenSpec::default()
        };
        let (ds, _) = generate(&spec).unwrap();
        let model = MugModel::new(ModelDims::new(spec.feature_dims, [6, 5, 7], 8)).unwrap();
        let p = model.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (model, p, ds.train.observations)
    }

    #[test]
    fn stage1_components_sum() {
        let (model, p, rows) = setup();
        let batch = Batch::from_slice(&rows).unwrap();
        let w = Stage1Weights {
            eta: 0.3,
            gamma: 0.7,
            tau: 0.5,
        };
        let l = stage1_loss(&model, &p, &batch, &w).unwrap();
        // independent recomputation of every part
        let f = model.forward(&p, &batch).unwrap();
        let lm = mae(&f.prediction, &batch.y).unwrap().item();
        let mut expected = lm;
        for m in Modality::ALL {
            let xp = model.project(&p, &f.fused, m).unwrap();
            let yp = model.predict_unimodal(&p, &xp, m).unwrap();
            let lp = yp.data().iter().zip(batch.y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 12.0;
            let lc = contrastive_loss(
                &l2_normalize_clamped(&xp).unwrap(),
                &l2_normalize_clamped(&f.unimodal[m.index()]).unwrap(),
                0.5,
            )
            .unwrap()
            .item();
            expected += 0.3 * lp + 0.7 * lc;
        }
        assert!((l.total.item() - expected).abs() < 1e-12);
        assert_eq!(l.multimodal.item(), lm);

        let plain = stage1_loss(
            &model,
            &p,
            &batch,
            &Stage1Weights {
                eta: 0.0,
                gamma: 0.0,
                tau: 1.0,
            },
        )
        .unwrap();
        assert_eq!(plain.total.item(), lm);
    }

    #[test]
    fn stage1_permutation_invariant() {
        let (model, p, rows) = setup();
        let w = Stage1Weights::default();
        let a = stage1_loss(&model, &p, &Batch::from_slice(&rows).unwrap(), &w).unwrap();
        let rev: Vec<Observation> = rows.iter().rev().cloned().collect();
        let b = stage1_loss(&model, &p, &Batch::from_slice(&rev).unwrap(), &w).unwrap();
        assert!((a.total.item() - b.total.item()).abs() < 1e-12);
    }

    #[test]
    fn stage3_components_and_missing_label() {
        let (model, p, rows) = setup();
        let batch = Batch::from_slice(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let entries: Vec<(u64, f64, [f64; 3])> = rows
            .iter()
            .map(|o| (o.id, o.y, [0; 3].map(|_| rng.random_range(-2.9..2.9))))
            .collect();
        let store = LabelStore::from_rows(3.0, entries.clone()).unwrap();
        let w = Stage3Weights { beta: 0.4 };
        let l = stage3_loss(&model, &p, &batch, &store, &w).unwrap();
        let f = model.forward(&p, &batch).unwrap();
        let lm = mae(&f.prediction, &batch.y).unwrap().item();
        let mut expected = lm;
        for m in Modality::ALL {
            let pred = model.predict_unimodal(&p, &f.unimodal[m.index()], m).unwrap();
            let lu = pred
                .data()
                .iter()
                .zip(&entries)
                .map(|(a, e)| (a - e.2[m.index()]).abs())
                .sum::<f64>()
                / 12.0;
            expected += 0.4 * lu;
        }
        assert!((l.total.item() - expected).abs() < 1e-12);
        let zero = stage3_loss(&model, &p, &batch, &store, &Stage3Weights { beta: 0.0 }).unwrap();
        assert_eq!(zero.total.item(), lm);

        let partial = LabelStore::from_rows(3.0, entries[1..].to_vec()).unwrap();
        assert!(matches!(
            stage3_loss(&model, &p, &batch, &partial, &w),
            Err(Error::MissingLabel(id)) if id == rows[0].id
        ));
    }
}
