//! Orchestration of the three stages and the artifacts they exchange.

mod config;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::Config;

use crate::autodiff::{Graph, Tensor};
use crate::data::{Dataset, Observation, Split};
use crate::error::{Error, Result};
use crate::losses::{mae, stage1_loss, stage3_loss};
use crate::meta::{run_meta, FrozenBank, LabelStore, MetaOutput};
use crate::metrics::{label_quality, MetricsReport};
use crate::modality::Modality;
use crate::model::{Batch, ModelDims, MugModel};
use crate::nn::{adamw_step, checkpoint, OptimizerState, ParamStore};
use crate::textio::write_atomic;

const STAGE1_INIT_STREAM: u64 = 10;
const STAGE1_SHUFFLE_STREAM: u64 = 11;
const STAGE3_INIT_STREAM: u64 = 30;
const STAGE3_SHUFFLE_STREAM: u64 = 31;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lines for `run.log`, mirrored to the `log` facade.
#[derive(Clone, Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    pub fn push(&mut self, line: impl Into<String>) {
        let line = line.into();
        log::debug!("{line}");
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn build_model(cfg: &Config, feature_dims: [usize; 3]) -> Result<MugModel> {
    MugModel::new(ModelDims::new(feature_dims, cfg.unimodal_dims(), cfg.d))
}

fn feature_dims(rows: &[Observation]) -> Result<[usize; 3]> {
    let first = rows.first().ok_or(Error::EmptyBatch)?;
    Ok([0, 1, 2].map(|i| first.features[i].len()))
}

/// One pass over `rows` in shuffled mini-batches, returning the loss of every step.
#[allow(clippy::too_many_arguments)]
fn train_epoch<F>(
    stage: &str,
    epoch: usize,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    rows: &[Observation],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut loss_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&ParamStore, &Batch) -> Result<Tensor>,
{
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut losses = Vec::with_capacity(order.len().div_ceil(batch_size));
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let picked: Vec<&Observation> = chunk.iter().map(|&i| &rows[i]).collect();
        let batch = Batch::new(&picked)?;
        let graph = Graph::new();
        let attached = params.attach(&graph);
        let loss = loss_fn(&attached, &batch)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::numerical(
                format!("{stage} epoch {epoch} batch {b}"),
                format!("loss is {value}"),
            ));
        }
        let grads = attached.gradients(&loss)?;
        adamw_step(params, &grads, opt)
            .map_err(|e| Error::numerical(format!("{stage} epoch {epoch} batch {b}"), e.to_string()))?;
        losses.push(value);
    }
    Ok(losses)
}

#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub model: MugModel,
    pub params: ParamStore,
    pub bank: FrozenBank,
    /// Total loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Pre-training on the stage-1 loss, then one forward pass over `train` to fill the bank.
pub fn run_stage1(cfg: &Config, train: &[Observation], log: &mut RunLog) -> Result<Stage1Output> {
    cfg.validate()?;
    let model = build_model(cfg, feature_dims(train)?)?;
    let mut params = model.init(&mut rng_for(cfg.seed, STAGE1_INIT_STREAM))?;
    let mut opt = OptimizerState::new(cfg.adamw());
    let mut rng = rng_for(cfg.seed, STAGE1_SHUFFLE_STREAM);
    let weights = cfg.stage1_weights();
    let mut step_losses = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let losses = train_epoch(
            "stage 1",
            epoch,
            &mut params,
            &mut opt,
            train,
            cfg.batch_size,
            &mut rng,
            |p, b| Ok(stage1_loss(&model, p, b, &weights)?.total),
        )?;
        log.push(format!("stage1 epoch={epoch} mean_loss={:.16e}", mean(&losses)));
        step_losses.extend(losses);
    }
    let bank = fill_bank(&model, &params, train)?;
    Ok(Stage1Output {
        model,
        params,
        bank,
        step_losses,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Unimodal and projected embeddings and projected predictions for every row.
pub fn fill_bank(model: &MugModel, params: &ParamStore, rows: &[Observation]) -> Result<FrozenBank> {
    let batch = Batch::from_slice(rows)?;
    let fwd = model.forward(params, &batch)?;
    let mut projected = Vec::with_capacity(3);
    let mut preds = Vec::with_capacity(3);
    for m in Modality::ALL {
        let xp = model.project(params, &fwd.fused, m)?;
        preds.push(model.predict_unimodal(params, &xp, m)?.to_vec());
        projected.push(xp);
    }
    let [pa, pv, pl]: [Tensor; 3] = projected.try_into().expect("three modalities");
    let [ya, yv, yl]: [Vec<f64>; 3] = preds.try_into().expect("three modalities");
    FrozenBank::new(batch.ids.clone(), batch.y.to_vec(), fwd.unimodal, [pa, pv, pl], [ya, yv, yl])
}

/// Meta-learning of the unimodal labels, with every gate decision logged.
pub fn run_stage2(cfg: &Config, bank: &FrozenBank, log: &mut RunLog) -> Result<MetaOutput> {
    cfg.validate()?;
    let out = run_meta(bank, &cfg.meta())?;
    for g in &out.gates {
        log.push(g.to_string());
    }
    for m in Modality::ALL {
        for (e, s) in out.summaries[m.index()].iter().enumerate() {
            log.push(format!(
                "stage2 epoch={e} modality={m} accepted={} meta_updated={} skipped={}",
                s.accepted, s.meta_updated, s.skipped
            ));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Stage3Output {
    pub model: MugModel,
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ParamStore,
    pub step_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Multimodal MAE of `params` on `rows`, without building a graph.
pub fn multimodal_mae(model: &MugModel, params: &ParamStore, rows: &[Observation]) -> Result<f64> {
    let batch = Batch::from_slice(rows)?;
    let fwd = model.forward(params, &batch)?;
    Ok(mae(&fwd.prediction, &batch.y)?.item())
}

pub fn predict(model: &MugModel, params: &ParamStore, rows: &[Observation]) -> Result<Vec<f64>> {
    let batch = Batch::from_slice(rows)?;
    Ok(model.forward(params, &batch)?.prediction.to_vec())
}

/// Joint training from a fresh initialization with early stopping on the
/// validation multimodal loss.
pub fn run_stage3(
    cfg: &Config,
    train: &[Observation],
    val: &[Observation],
    labels: &LabelStore,
    log: &mut RunLog,
) -> Result<Stage3Output> {
    cfg.validate()?;
    let model = build_model(cfg, feature_dims(train)?)?;
    let mut params = model.init(&mut rng_for(cfg.seed, STAGE3_INIT_STREAM))?;
    let mut opt = OptimizerState::new(cfg.adamw());
    let mut rng = rng_for(cfg.seed, STAGE3_SHUFFLE_STREAM);
    let weights = cfg.stage3_weights();
    let mut step_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.stage3_max_epochs {
        let losses = train_epoch(
            "stage 3",
            epoch,
            &mut params,
            &mut opt,
            train,
            cfg.batch_size,
            &mut rng,
            |p, b| Ok(stage3_loss(&model, p, b, labels, &weights)?.total),
        )?;
        let val_loss = multimodal_mae(&model, &params, val)?;
        log.push(format!(
            "stage3 epoch={epoch} mean_loss={:.16e} val_loss={val_loss:.16e}",
            mean(&losses)
        ));
        step_losses.extend(losses);
        val_losses.push(val_loss);
        epochs_run = epoch + 1;
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.push(format!("stage3 early stop at epoch {epoch}, best epoch {}", best.1));
                break;
            }
        }
    }
    Ok(Stage3Output {
        model,
        params: best.2,
        step_losses,
        val_losses,
        best_epoch: best.1,
        epochs_run,
    })
}

/// Test metrics of a trained model, plus label quality when the training split has truth.
pub fn evaluate(cfg: &Config, out: &Stage3Output, test: &Split, train: &Split, labels: &LabelStore) -> Result<MetricsReport> {
    let preds = predict(&out.model, &out.params, &test.observations)?;
    let y: Vec<f64> = test.observations.iter().map(|o| o.y).collect();
    let quality = if train.has_truth() {
        Some(label_quality(labels, train)?)
    } else {
        None
    };
    MetricsReport::evaluate(&preds, &y, quality.as_ref(), cfg.f1_mode)
}

/// Files written by a full run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunArtifacts {
    pub stage1_checkpoint: PathBuf,
    pub frozen_bank: PathBuf,
    pub label_store: PathBuf,
    pub stage3_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        RunArtifacts {
            stage1_checkpoint: dir.join("stage1.ckpt"),
            frozen_bank: dir.join("frozen_bank.txt"),
            label_store: dir.join("labels.csv"),
            stage3_checkpoint: dir.join("stage3.ckpt"),
            metrics: dir.join("metrics.json"),
            log: dir.join("run.log"),
        }
    }

    pub fn paths(&self) -> [&Path; 6] {
        [
            &self.stage1_checkpoint,
            &self.frozen_bank,
            &self.label_store,
            &self.stage3_checkpoint,
            &self.metrics,
            &self.log,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub artifacts: RunArtifacts,
    pub report: MetricsReport,
    pub stage1: Stage1Output,
    pub labels: LabelStore,
    pub stage3: Stage3Output,
}

/// Stages 1 and 2 once, then stage 3, writing every artifact into `out_dir`.
pub fn run_all(cfg: &Config, data: &Dataset, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let artifacts = RunArtifacts::in_dir(out_dir);
    let mut log = RunLog::default();
    log.push(format!("seed={}", cfg.seed));

    // training code only ever sees observations
    let stage1 = run_stage1(cfg, &data.train.observations, &mut log)?;
    checkpoint::save(&stage1.params, &artifacts.stage1_checkpoint)?;
    stage1.bank.save(&artifacts.frozen_bank)?;

    let meta = run_stage2(cfg, &stage1.bank, &mut log)?;
    meta.labels.save(&artifacts.label_store)?;

    let stage3 = run_stage3(cfg, &data.train.observations, &data.val.observations, &meta.labels, &mut log)?;
    checkpoint::save(&stage3.params, &artifacts.stage3_checkpoint)?;

    let report = evaluate(cfg, &stage3, &data.test, &data.train, &meta.labels)?;
    write_atomic(&artifacts.metrics, report.to_json().as_bytes())?;
    write_atomic(&artifacts.log, log.to_text().as_bytes())?;
    Ok(RunSummary {
        artifacts,
        report,
        stage1,
        labels: meta.labels,
        stage3,
    })
}
