//! Siamese training loop and snapshot evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, SimilarityPair};
use crate::encoder::{Activation, Checkpoint, EncoderError, EncoderModel, Gradients, SgdConfig};
use crate::losses::LossKind;
use crate::metrics::{evaluate_model, EvalConfig, EvalReport, GroundTruth, MetricsError};
use crate::sampler::{stratify, BatchSampler, BatchSpec, SamplerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration} (pairs {pairs:?})")]
    NonFiniteLoss {
        iteration: u64,
        pairs: Vec<(u32, u32)>,
    },
    #[error("checkpoint for iteration {iteration} is missing: {path}")]
    MissingCheckpoint { iteration: u64, path: PathBuf },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}
fn default_d_out() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_snapshot_period() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub sgd: SgdConfig,
    pub batch: BatchSpec,
    pub iterations: u64,
    #[serde(default = "default_snapshot_period")]
    pub snapshot_period: u64,
    /// Hidden layer widths; the input width comes from the data.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_d_out")]
    pub d_out: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub init_seed: u64,
    pub sampler_seed: u64,
}

impl TrainConfig {
    /// Defaults for `loss`, with the learning rate chosen by
    /// [`default_sgd_for`] and a 250k-iteration step period.
    pub fn new(loss: LossKind, iterations: u64, init_seed: u64, sampler_seed: u64) -> Self {
        Self {
            loss,
            sgd: default_sgd_for(&loss, 250_000),
            batch: BatchSpec::new(16),
            iterations,
            snapshot_period: default_snapshot_period(),
            hidden: default_hidden(),
            d_out: default_d_out(),
            activation: default_activation(),
            init_seed,
            sampler_seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be > 0".into()));
        }
        if self.snapshot_period == 0 {
            return Err(TrainError::Config("snapshot_period must be > 0".into()));
        }
        if self.d_out == 0 || self.hidden.contains(&0) {
            return Err(TrainError::Config("layer widths must be > 0".into()));
        }
        match self.loss {
            LossKind::Mse => {}
            LossKind::Contrastive { margin, threshold } => {
                if !(margin > 0.0) || !(threshold > 0.0 && threshold < 1.0) {
                    return Err(TrainError::Config(
                        "cl needs margin > 0 and threshold in (0, 1)".into(),
                    ));
                }
            }
            LossKind::Gcl { margin } => {
                if !(margin > 0.0) {
                    return Err(TrainError::Config("gcl needs margin > 0".into()));
                }
            }
        }
        self.sgd.validate()?;
        self.batch.validate()?;
        Ok(())
    }

    pub fn dims(&self, d_in: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d_in);
        dims.extend(&self.hidden);
        dims.push(self.d_out);
        dims
    }

    /// Iterations at which snapshots are taken: 0, every period, and the
    /// final iteration.
    pub fn snapshot_iterations(&self) -> Vec<u64> {
        let mut its: Vec<u64> = (0..=self.iterations)
            .step_by(self.snapshot_period as usize)
            .collect();
        if its.last() != Some(&self.iterations) {
            its.push(self.iterations);
        }
        its
    }
}

/// Learning-rate default per loss: constant for MSE and CL, step decay by
/// 0.1 every `step_period` iterations for GCL.
pub fn default_sgd_for(loss: &LossKind, step_period: u64) -> SgdConfig {
    match loss {
        LossKind::Gcl { .. } => SgdConfig::step(step_period),
        _ => SgdConfig::default(),
    }
}

/// Where a snapshot's parameters live.
#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotSource {
    Memory(Box<EncoderModel>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub source: SnapshotSource,
}

impl Snapshot {
    pub fn load(&self) -> Result<EncoderModel, TrainError> {
        match &self.source {
            SnapshotSource::Memory(m) => Ok((**m).clone()),
            SnapshotSource::File(path) => {
                if !path.is_file() {
                    return Err(TrainError::MissingCheckpoint {
                        iteration: self.iteration,
                        path: path.clone(),
                    });
                }
                Ok(Checkpoint::load(path)?.into_model()?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: EncoderModel,
    pub snapshots: Vec<Snapshot>,
    /// Mean batch loss per iteration, before that iteration's update.
    pub loss_log: Vec<(u64, f64)>,
}

/// Runs siamese SGD: both members of every pair go through the same model,
/// gradients of the mean batch loss from both branches are summed into one
/// update.
pub fn train(
    ds: &Dataset,
    pairs: &[SimilarityPair],
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    train_with_observer(ds, pairs, cfg, |_, _, _| {})
}

/// [`train`], calling `observe(iteration, batch, model)` before each update.
/// The batch is drawn before the model is consulted.
pub fn train_with_observer(
    ds: &Dataset,
    pairs: &[SimilarityPair],
    cfg: &TrainConfig,
    mut observe: impl FnMut(u64, &[SimilarityPair], &EncoderModel),
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let d_in = ds.d_in().ok_or(DatasetError::MissingObservations)?;
    if !ds.has_observations() {
        return Err(DatasetError::MissingObservations.into());
    }
    for p in pairs {
        ds.observation(p.i)?;
        ds.observation(p.j)?;
    }
    let mut sampler = BatchSampler::new(stratify(pairs), cfg.batch, cfg.sampler_seed)?;
    let mut model = EncoderModel::init(&cfg.dims(d_in), cfg.activation, cfg.init_seed)?;

    let mut snapshots = vec![Snapshot {
        iteration: 0,
        source: SnapshotSource::Memory(Box::new(model.clone())),
    }];
    let mut loss_log = Vec::with_capacity(cfg.iterations as usize);
    let mut grads = Gradients::zeros_like(&model);
    let inv_batch = 1.0 / cfg.batch.batch_size as f64;

    for iteration in 0..cfg.iterations {
        let batch = sampler.next_batch();
        observe(iteration, &batch, &model);
        grads.scale(0.0);
        let mut total = 0.0;
        for p in &batch {
            let ci = model.forward(ds.observation(p.i)?)?;
            let cj = model.forward(ds.observation(p.j)?)?;
            let out = cfg.loss.evaluate(
                ci.descriptor().as_slice(),
                cj.descriptor().as_slice(),
                p.psi,
            );
            total += out.value;
            model.backward_into(&ci, &out.grad_i, &mut grads);
            model.backward_into(&cj, &out.grad_j, &mut grads);
        }
        let loss = total * inv_batch;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration,
                pairs: batch.iter().map(|p| (p.i, p.j)).collect(),
            });
        }
        loss_log.push((iteration, loss));
        grads.scale(inv_batch);
        model.sgd_step(&grads, iteration, &cfg.sgd)?;

        let done = iteration + 1;
        if done % cfg.snapshot_period == 0 || done == cfg.iterations {
            snapshots.push(Snapshot {
                iteration: done,
                source: SnapshotSource::Memory(Box::new(model.clone())),
            });
        }
    }
    Ok(TrainRun {
        model,
        snapshots,
        loss_log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub report: EvalReport,
}

/// Evaluates every snapshot in iteration order.
pub fn evaluate_snapshots(
    snapshots: &[Snapshot],
    eval: &Dataset,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<Vec<CurvePoint>, TrainError> {
    let mut ordered: Vec<&Snapshot> = snapshots.iter().collect();
    ordered.sort_by_key(|s| s.iteration);
    ordered
        .into_iter()
        .map(|s| {
            let model = s.load()?;
            Ok(CurvePoint {
                iteration: s.iteration,
                report: evaluate_model(&model, eval, gt, cfg)?,
            })
        })
        .collect()
}

pub const CURVE_HEADER: &str = "iteration,r_at_1,r_at_5,r_at_10,mrr5,kldiv";

pub fn write_curve_csv(out: impl Write, curve: &[CurvePoint]) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{CURVE_HEADER}")?;
    for p in curve {
        let r = &p.report;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.iteration, r.r_at_1, r.r_at_5, r.r_at_10, r.mrr5, r.kldiv
        )?;
    }
    out.flush()
}

pub fn write_loss_log_csv(out: impl Write, log: &[(u64, f64)]) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "iteration,loss")?;
    for (it, loss) in log {
        writeln!(out, "{it},{loss}")?;
    }
    out.flush()
}

/// File name of the checkpoint for `iteration` inside a run directory.
pub fn checkpoint_file_name(iteration: u64) -> String {
    format!("ckpt_{iteration:08}.json")
}

/// Writes every snapshot as a checkpoint file under `dir` and returns the
/// file-backed snapshot list.
pub fn persist_snapshots(run: &TrainRun, dir: &Path) -> Result<Vec<Snapshot>, TrainError> {
    std::fs::create_dir_all(dir)?;
    run.snapshots
        .iter()
        .map(|s| {
            let path = dir.join(checkpoint_file_name(s.iteration));
            Checkpoint::from_model(&s.load()?, s.iteration).save(&path)?;
            Ok(Snapshot {
                iteration: s.iteration,
                source: SnapshotSource::File(path),
            })
        })
        .collect()
}

pub fn write_file(
    path: &Path,
    write: impl FnOnce(&mut File) -> std::io::Result<()>,
) -> Result<(), TrainError> {
    let mut f = File::create(path)?;
    write(&mut f)?;
    Ok(())
}
