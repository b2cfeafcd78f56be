//! Stage 2: learning unimodal labels with per-modality label-correction
//! networks trained on denoising tasks, gated by a bi-level meta-update.

mod bank;
mod labels;

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use bank::FrozenBank;
pub use labels::{LabelRow, LabelStore};

use crate::autodiff::{hypergrad, inner_sgd, Graph, HypergradMode, Tensor};
use crate::error::{Error, Result};
use crate::losses::mae;
use crate::modality::Modality;
use crate::model::Mucn;
use crate::nn::ParamStore;

/// Smallest corruption std accepted by the configuration.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Inner (unimodal denoising) learning rate.
    pub alpha: f64,
    /// Meta-update learning rate.
    pub meta_lr: f64,
    /// Std of the label corruption noise.
    pub sigma: f64,
    pub lambda_init: f64,
    /// The multimodal task set holds `1 + oversample` times the batch.
    pub oversample: usize,
    pub inner_steps: usize,
    pub rho: f64,
    pub mode: HypergradMode,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            epochs: 65,
            batch_size: 32,
            alpha: 5e-3,
            meta_lr: 1e-3,
            sigma: 1.0,
            lambda_init: 0.5,
            oversample: 10,
            inner_steps: 1,
            rho: 3.0,
            mode: HypergradMode::SecondOrder,
            seed: 1111,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.inner_steps == 0 {
            return bad("k_inner must be at least 1".into());
        }
        if self.sigma.is_nan() || self.sigma < SIGMA_FLOOR {
            return bad(format!("sigma must be >= {SIGMA_FLOOR}, got {}", self.sigma));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return bad(format!("lambda_init must lie in (0, 1), got {}", self.lambda_init));
        }
        if !(self.alpha >= 0.0 && self.meta_lr >= 0.0) {
            return bad("learning rates must be >= 0".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        Ok(())
    }

    /// First epoch whose unimodal targets mix in the previous epoch's labels.
    pub fn half_epoch(&self) -> usize {
        self.epochs / 2
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    sigma * rng.sample::<f64, _>(StandardNormal)
}

/// `y + ε`, `ε ~ N(0, σ²)`.
pub fn corrupt_label(y: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    y + gaussian(rng, sigma)
}

/// Noisy multimodal label from a projected prediction: `ŷ + ε`.
pub fn make_noisy_label(projected_pred: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    projected_pred + gaussian(rng, sigma)
}

pub fn mixed_target(prev: f64, y: f64, lambda: f64) -> f64 {
    lambda * prev + (1.0 - lambda) * y
}

/// `λ_init^(E+1)`.
pub fn lambda_schedule(lambda_init: f64, epoch: usize) -> f64 {
    lambda_init.powi(epoch as i32 + 1)
}

/// Mean `|target - MUCN(x, noisy)|` over a task set.
pub fn unimodal_denoise_loss(mucn: &Mucn, p: &ParamStore, x_uni: &Tensor, noisy: &Tensor, target: &Tensor) -> Result<Tensor> {
    mae(&mucn.forward(p, x_uni, noisy)?, target)
}

/// Mean `|y - MUCN(x_proj, ȳ)|` over the multimodal task set.
pub fn multimodal_denoise_loss(mucn: &Mucn, p: &ParamStore, x_proj: &Tensor, noisy: &Tensor, y: &Tensor) -> Result<Tensor> {
    mae(&mucn.forward(p, x_proj, noisy)?, y)
}

/// Row indices of the multimodal task set: `batch` followed by `oversample·|batch|`
/// extra rows, drawn from outside `batch` without replacement when there are
/// enough of them and with replacement from all rows otherwise.
pub fn denoise_set(n: usize, batch: &[usize], oversample: usize, rng: &mut impl Rng) -> Vec<usize> {
    let extra = oversample * batch.len();
    let mut out = batch.to_vec();
    let mut in_batch = vec![false; n];
    for &i in batch {
        in_batch[i] = true;
    }
    let pool: Vec<usize> = (0..n).filter(|&i| !in_batch[i]).collect();
    if pool.len() >= extra {
        out.extend(index::sample(rng, pool.len(), extra).into_iter().map(|k| pool[k]));
    } else {
        log::warn!(
            "multimodal task set needs {extra} extra rows but only {} are available; sampling with replacement",
            pool.len()
        );
        out.extend((0..extra).map(|_| rng.random_range(0..n)));
    }
    out
}

/// Inputs of one meta step for a single modality.
#[derive(Clone, Debug)]
pub struct MetaTask {
    pub x_uni: Tensor,
    /// Corrupted labels fed to the network in the unimodal task.
    pub noisy: Tensor,
    pub target: Tensor,
    pub x_proj: Tensor,
    /// Noisy labels of the multimodal task, shared by the pre and post evaluation.
    pub noisy_proj: Tensor,
    pub y: Tensor,
}

impl MetaTask {
    /// Draws the noise of one step. `targets` is indexed by bank row.
    pub fn draw(
        bank: &FrozenBank,
        m: Modality,
        batch: &[usize],
        targets: &[f64],
        cfg: &MetaConfig,
        rng: &mut impl Rng,
    ) -> Result<MetaTask> {
        let i = m.index();
        let noisy: Vec<f64> = batch.iter().map(|&r| corrupt_label(bank.y[r], cfg.sigma, rng)).collect();
        let target: Vec<f64> = batch.iter().map(|&r| targets[r]).collect();
        let set = denoise_set(bank.len(), batch, cfg.oversample, rng);
        let noisy_proj: Vec<f64> = set
            .iter()
            .map(|&r| make_noisy_label(bank.projected_pred[i][r], cfg.sigma, rng))
            .collect();
        let y: Vec<f64> = set.iter().map(|&r| bank.y[r]).collect();
        Ok(MetaTask {
            x_uni: bank.unimodal[i].gather_rows(batch),
            noisy: Tensor::new(&[batch.len(), 1], noisy)?,
            target: Tensor::new(&[batch.len(), 1], target)?,
            x_proj: bank.projected[i].gather_rows(&set),
            noisy_proj: Tensor::new(&[set.len(), 1], noisy_proj)?,
            y: Tensor::new(&[set.len(), 1], y)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateOutcome {
    /// The inner update lowered the multimodal loss and was kept.
    Accepted,
    /// The inner update was discarded and the parameters moved along the hypergradient.
    MetaUpdated,
}

impl fmt::Display for GateOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateOutcome::Accepted => "accept",
            GateOutcome::MetaUpdated => "meta-update",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateRecord {
    pub epoch: usize,
    pub batch: usize,
    pub modality: Modality,
    pub l_pre: f64,
    pub l_post: f64,
    pub outcome: GateOutcome,
}

impl fmt::Display for GateRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gate epoch={} batch={} modality={} l_pre={:.16e} l_post={:.16e} branch={}",
            self.epoch, self.batch, self.modality, self.l_pre, self.l_post, self.outcome
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub l_pre: f64,
    pub l_post: f64,
    pub outcome: GateOutcome,
}

/// One gated meta step on `params`.
///
/// The multimodal loss is evaluated before and after an inner update on the
/// unimodal task, with identical inputs and noise. A strictly lower loss keeps
/// the update; otherwise the update is dropped and `params` take a step of
/// size `meta_lr` against the gradient of the post-update loss.
pub fn meta_step(mucn: &Mucn, params: &mut ParamStore, task: &MetaTask, cfg: &MetaConfig) -> Result<StepResult> {
    let context = format!("meta step of MUCN_{}", mucn.modality);
    let l_pre = multimodal_denoise_loss(mucn, params, &task.x_proj, &task.noisy_proj, &task.y)?.item();
    if !l_pre.is_finite() {
        return Err(Error::numerical(context, format!("pre-update loss is {l_pre}")));
    }
    let graph = Graph::new();
    let leaves = params.attach(&graph);
    let update = inner_sgd(
        &leaves.tensors(),
        cfg.alpha,
        cfg.inner_steps,
        cfg.mode == HypergradMode::SecondOrder,
        |theta| {
            unimodal_denoise_loss(
                mucn,
                &leaves.with_values(theta.to_vec()),
                &task.x_uni,
                &task.noisy,
                &task.target,
            )
        },
    )?;
    let updated = leaves.with_values(update.updated.clone());
    let post = multimodal_denoise_loss(mucn, &updated, &task.x_proj, &task.noisy_proj, &task.y)?;
    let l_post = post.item();
    if !l_post.is_finite() {
        return Err(Error::numerical(context, format!("post-update loss is {l_post}")));
    }
    let outcome = if l_post < l_pre {
        *params = updated.detach();
        GateOutcome::Accepted
    } else {
        let h = hypergrad(&post, &update, cfg.mode)?;
        if let Some((name, _)) = params.names().zip(&h).find(|(_, g)| g.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical(context, format!("non-finite hypergradient for {name}")));
        }
        let next: Vec<Tensor> = params
            .tensors()
            .iter()
            .zip(&h)
            .map(|(t, g)| t.sub(&g.scale(cfg.meta_lr)))
            .collect();
        *params = params.with_values(next);
        GateOutcome::MetaUpdated
    };
    Ok(StepResult { l_pre, l_post, outcome })
}

/// Corrected labels `MUCN(x_m, y)` for every bank row, with no corruption.
pub fn corrected_labels(mucn: &Mucn, params: &ParamStore, bank: &FrozenBank) -> Result<Vec<f64>> {
    let out = mucn.forward(params, &bank.unimodal[mucn.modality.index()], &Tensor::column(&bank.y))?;
    Ok(out.to_vec())
}

/// Per-modality training state.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub mucn: Mucn,
    pub params: ParamStore,
    /// Corrected labels from the end of the previous epoch, by bank row.
    pub prev_labels: Vec<f64>,
    pub lambda: f64,
    pub epoch: usize,
}

impl MetaState {
    pub fn new(mucn: Mucn, params: ParamStore, bank: &FrozenBank, lambda_init: f64) -> Result<Self> {
        let prev_labels = corrected_labels(&mucn, &params, bank)?;
        Ok(MetaState {
            mucn,
            params,
            prev_labels,
            lambda: lambda_schedule(lambda_init, 0),
            epoch: 0,
        })
    }
}

/// Counts of one epoch of one modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpochSummary {
    pub accepted: usize,
    pub meta_updated: usize,
    pub skipped: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fresh networks for all modalities, sized to the bank.
pub fn init_networks(bank: &FrozenBank, cfg: &MetaConfig) -> Result<[(Mucn, ParamStore); 3]> {
    let mut out = Vec::with_capacity(3);
    for m in Modality::ALL {
        let mucn = Mucn::new(m, bank.rep_dim(m), cfg.rho)?;
        let params = mucn.init(&mut rng_for(cfg.seed, 100 + m.index() as u64))?;
        out.push((mucn, params));
    }
    Ok(out.try_into().expect("three modalities"))
}

/// Runs every epoch for one modality, appending each gate decision to `gates`.
pub fn train_modality(
    state: &mut MetaState,
    bank: &FrozenBank,
    cfg: &MetaConfig,
    gates: &mut Vec<GateRecord>,
) -> Result<Vec<EpochSummary>> {
    let m = state.mucn.modality;
    let mut rng = rng_for(cfg.seed, 1 + m.index() as u64);
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut summaries = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        state.lambda = lambda_schedule(cfg.lambda_init, epoch);
        let targets: Vec<f64> = if epoch < cfg.half_epoch() {
            bank.y.clone()
        } else {
            state
                .prev_labels
                .iter()
                .zip(&bank.y)
                .map(|(&p, &y)| mixed_target(p, y, state.lambda))
                .collect()
        };
        order.shuffle(&mut rng);
        let mut summary = EpochSummary::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let task = MetaTask::draw(bank, m, batch, &targets, cfg, &mut rng)?;
            match meta_step(&state.mucn, &mut state.params, &task, cfg) {
                Ok(step) => {
                    match step.outcome {
                        GateOutcome::Accepted => summary.accepted += 1,
                        GateOutcome::MetaUpdated => summary.meta_updated += 1,
                    }
                    gates.push(GateRecord {
                        epoch,
                        batch: b,
                        modality: m,
                        l_pre: step.l_pre,
                        l_post: step.l_post,
                        outcome: step.outcome,
                    });
                }
                Err(e @ Error::Numerical { .. }) => {
                    log::warn!("epoch {epoch} batch {b} modality {m}: {e}; step skipped");
                    summary.skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        state.prev_labels = corrected_labels(&state.mucn, &state.params, bank)?;
        log::info!(
            "meta epoch {epoch} modality {m}: lambda={:.6} accepted={} meta-updated={} skipped={}",
            state.lambda,
            summary.accepted,
            summary.meta_updated,
            summary.skipped
        );
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Final labels of all modalities for every bank row.
pub fn extract_labels(states: &[MetaState; 3], bank: &FrozenBank) -> Result<LabelStore> {
    let cols = [
        corrected_labels(&states[0].mucn, &states[0].params, bank)?,
        corrected_labels(&states[1].mucn, &states[1].params, bank)?,
        corrected_labels(&states[2].mucn, &states[2].params, bank)?,
    ];
    let rho = states[0].mucn.rho;
    LabelStore::from_rows(
        rho,
        bank.ids
            .iter()
            .enumerate()
            .map(|(r, &id)| (id, bank.y[r], [cols[0][r], cols[1][r], cols[2][r]])),
    )
}

#[derive(Clone, Debug)]
pub struct MetaOutput {
    pub labels: LabelStore,
    pub states: [MetaState; 3],
    pub gates: Vec<GateRecord>,
    /// Epoch summaries per modality.
    pub summaries: [Vec<EpochSummary>; 3],
}

/// Whole stage 2: the modalities run one after another over the read-only bank.
pub fn run_meta(bank: &FrozenBank, cfg: &MetaConfig) -> Result<MetaOutput> {
    cfg.validate()?;
    let mut gates = Vec::new();
    let mut states = Vec::with_capacity(3);
    let mut summaries = Vec::with_capacity(3);
    for (mucn, params) in init_networks(bank, cfg)? {
        let mut state = MetaState::new(mucn, params, bank, cfg.lambda_init)?;
        summaries.push(train_modality(&mut state, bank, cfg, &mut gates)?);
        states.push(state);
    }
    let states: [MetaState; 3] = states.try_into().expect("three modalities");
    let labels = extract_labels(&states, bank)?;
    Ok(MetaOutput {
        labels,
        states,
        gates,
        summaries: summaries.try_into().expect("three modalities"),
    })
}

#[cfg(test)]
mod tests {
    use super::bank::tests::random_bank;
    use super::*;
    use crate::autodiff::grad;

    fn zero_head(mucn: &Mucn, p: &mut ParamStore) {
        let (w, b) = mucn.head_names();
        let ws = p.get(&w).unwrap().shape().to_vec();
        p.set(&w, Tensor::zeros(&ws)).unwrap();
        p.set(&b, Tensor::zeros(&[1])).unwrap();
    }

    #[test]
    fn noise_moments_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 1.5;
        let eps: Vec<f64> = (0..100_000).map(|_| corrupt_label(2.0, sigma, &mut rng) - 2.0).collect();
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / eps.len() as f64;
        assert!(mean.abs() < 0.01 * sigma * 2.0, "{mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "{var}");

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| make_noisy_label(0.0, 1.0, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert!((corrupt_label(0.7, SIGMA_FLOOR, &mut r) - 0.7).abs() < 1e-10);
    }

    #[test]
    fn noisy_label_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps: Vec<f64> = (0..100_000).map(|_| make_noisy_label(-1.0, 1.0, &mut rng) + 1.0).collect();
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / eps.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn schedule_and_mixing() {
        assert_eq!(lambda_schedule(0.5, 0), 0.5);
        assert_eq!(lambda_schedule(0.5, 1), 0.25);
        assert!((lambda_schedule(0.9, 9) - 0.34868).abs() < 1e-5);
        for e in 0..30 {
            assert!(lambda_schedule(0.7, e + 1) < lambda_schedule(0.7, e));
        }
        assert_eq!(mixed_target(2.0, -1.0, 0.0), -1.0);
        assert_eq!(mixed_target(2.0, -1.0, 1.0), 2.0);
        assert_eq!(mixed_target(2.0, -1.0, 0.25), -0.25);
        let cfg = MetaConfig {
            epochs: 65,
            ..MetaConfig::default()
        };
        assert_eq!(cfg.half_epoch(), 32);
    }

    #[test]
    fn denoise_set_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch: Vec<usize> = (0..32).collect();
        let set = denoise_set(1284, &batch, 10, &mut rng);
        assert_eq!(set.len(), 352);
        let mut sorted = set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 352);
        // too few rows: falls back to replacement
        let small = denoise_set(40, &batch, 10, &mut rng);
        assert_eq!(small.len(), 352);
        assert!(small.iter().all(|&i| i < 40));
    }

    #[test]
    fn unimodal_loss_values() {
        let mucn = Mucn::new(Modality::Visual, 3, 3.0).unwrap();
        let mut p = mucn.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        zero_head(&mucn, &mut p);
        let x = Tensor::new(&[1, 3], vec![0.3, -2.0, 5.0]).unwrap();
        let zero = Tensor::column(&[0.0]);
        assert_eq!(unimodal_denoise_loss(&mucn, &p, &x, &zero, &zero).unwrap().item(), 0.0);
        let one = Tensor::column(&[1.0]);
        let l = unimodal_denoise_loss(&mucn, &p, &x, &one, &one).unwrap().item();
        assert!((l - (1.0 - 3.0 * 1f64.tanh()).abs()).abs() < 1e-12);
        assert!((l - 1.284782).abs() < 1e-6);
    }

    #[test]
    fn denoise_losses_match_per_sample_recomputation() {
        let mucn = Mucn::new(Modality::Acoustic, 4, 3.0).unwrap();
        let p = mucn.init(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let x = Tensor::new(&[n, 4], (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let noisy: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut expected = 0.0;
        for j in 0..n {
            let xj = x.gather_rows(&[j]);
            let out = mucn.forward(&p, &xj, &Tensor::column(&[noisy[j]])).unwrap().item();
            expected += (target[j] - out).abs();
        }
        expected /= n as f64;
        let (nt, tt) = (Tensor::column(&noisy), Tensor::column(&target));
        let u = unimodal_denoise_loss(&mucn, &p, &x, &nt, &tt).unwrap().item();
        let mm = multimodal_denoise_loss(&mucn, &p, &x, &nt, &tt).unwrap().item();
        assert!((u - expected).abs() < 1e-12);
        assert_eq!(u, mm);
    }

    #[test]
    fn perfect_outputs_give_zero_multimodal_loss() {
        let mucn = Mucn::new(Modality::Language, 2, 3.0).unwrap();
        let mut p = mucn.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        zero_head(&mucn, &mut p);
        // with a zeroed head the output is rho·tanh(ȳ); choose y to match it
        let ybar = [0.3, -1.2, 2.0];
        let y: Vec<f64> = ybar.iter().map(|v| 3.0 * f64::tanh(*v)).collect();
        let x = Tensor::ones(&[3, 2]);
        let l = multimodal_denoise_loss(&mucn, &p, &x, &Tensor::column(&ybar), &Tensor::column(&y)).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    fn toy_task(bank: &FrozenBank, m: Modality, seed: u64, cfg: &MetaConfig) -> MetaTask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<usize> = (0..8).collect();
        MetaTask::draw(bank, m, &batch, &bank.y, cfg, &mut rng).unwrap()
    }

    #[test]
    fn zero_inner_rate_always_meta_updates() {
        let bank = random_bank(40, [3, 3, 3], 7);
        let cfg = MetaConfig {
            alpha: 0.0,
            oversample: 2,
            ..MetaConfig::default()
        };
        let mucn = Mucn::new(Modality::Acoustic, 3, 3.0).unwrap();
        for seed in 0..20 {
            let mut p = mucn.init(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let task = toy_task(&bank, Modality::Acoustic, seed, &cfg);
            let step = meta_step(&mucn, &mut p, &task, &cfg).unwrap();
            assert_eq!(step.l_pre, step.l_post);
            assert_eq!(step.outcome, GateOutcome::MetaUpdated);
        }
    }

    #[test]
    fn meta_update_moves_against_hypergradient() {
        let bank = random_bank(40, [3, 3, 3], 8);
        let cfg = MetaConfig {
            alpha: 0.0,
            oversample: 2,
            meta_lr: 0.1,
            ..MetaConfig::default()
        };
        let mucn = Mucn::new(Modality::Visual, 3, 3.0).unwrap();
        let p0 = mucn.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let task = toy_task(&bank, Modality::Visual, 3, &cfg);
        let g = Graph::new();
        let leaves = p0.attach(&g);
        let loss = multimodal_denoise_loss(&mucn, &leaves, &task.x_proj, &task.noisy_proj, &task.y).unwrap();
        let expected = grad(&loss, &leaves.tensors(), false).unwrap();
        let mut p = p0.clone();
        meta_step(&mucn, &mut p, &task, &cfg).unwrap();
        for ((before, after), g) in p0.tensors().iter().zip(p.tensors()).zip(&expected) {
            for ((b, a), gv) in before.data().iter().zip(after.data()).zip(g.data()) {
                assert!((a - (b - 0.1 * gv)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn accepted_step_adopts_inner_update() {
        // unimodal and multimodal tasks coincide, so a small descent step lowers both
        let bank = random_bank(40, [3, 3, 3], 9);
        let cfg = MetaConfig {
            alpha: 1e-3,
            oversample: 0,
            ..MetaConfig::default()
        };
        let mucn = Mucn::new(Modality::Language, 3, 3.0).unwrap();
        let p0 = mucn.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let base = toy_task(&bank, Modality::Language, 2, &cfg);
        let task = MetaTask {
            x_proj: base.x_uni.clone(),
            noisy_proj: base.noisy.clone(),
            y: base.target.clone(),
            ..base
        };
        let mut p = p0.clone();
        let step = meta_step(&mucn, &mut p, &task, &cfg).unwrap();
        assert_eq!(step.outcome, GateOutcome::Accepted);
        assert!(step.l_post < step.l_pre);
        assert_ne!(p, p0);
        let l_now = multimodal_denoise_loss(&mucn, &p, &task.x_proj, &task.noisy_proj, &task.y)
            .unwrap()
            .item();
        assert_eq!(l_now, step.l_post);
    }

    #[test]
    fn untrained_extraction_is_rho_tanh_y() {
        let bank = random_bank(15, [2, 3, 4], 10);
        let cfg = MetaConfig {
            epochs: 0,
            ..MetaConfig::default()
        };
        let out = run_meta(&bank, &cfg).unwrap();
        assert_eq!(out.labels.len(), 15);
        assert!(out.gates.is_empty());
        for (r, &id) in bank.ids.iter().enumerate() {
            let row = out.labels.get(id).unwrap();
            for v in row.corrected {
                assert!((v - 3.0 * bank.y[r].tanh()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gate_counts_cover_every_batch_and_run_is_deterministic() {
        let bank = random_bank(50, [3, 2, 4], 11);
        let cfg = MetaConfig {
            epochs: 4,
            batch_size: 8,
            oversample: 2,
            ..MetaConfig::default()
        };
        let a = run_meta(&bank, &cfg).unwrap();
        for s in &a.summaries {
            let total: usize = s.iter().map(|e| e.accepted + e.meta_updated).sum();
            assert_eq!(total, 4 * 7);
        }
        assert_eq!(a.gates.len(), 3 * 4 * 7);
        let b = run_meta(&bank, &cfg).unwrap();
        assert_eq!(a.labels.to_csv(), b.labels.to_csv());
        let bounded = a.labels.iter().all(|(_, r)| r.corrected.iter().all(|v| v.abs() < 3.0));
        assert!(bounded);
    }

    #[test]
    fn bank_is_untouched() {
        let bank = random_bank(30, [2, 2, 2], 12);
        let before = bank.to_text().unwrap();
        let cfg = MetaConfig {
            epochs: 2,
            batch_size: 10,
            oversample: 1,
            ..MetaConfig::default()
        };
        run_meta(&bank, &cfg).unwrap();
        assert_eq!(bank.to_text().unwrap(), before);
    }
}
