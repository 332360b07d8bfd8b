//! Training harness: two-phase Adam training of [`Model`] on depth/label
//! pairs, with a line-delimited JSON log and phase checkpoints.

pub mod augment;
pub mod optim;
pub mod synth;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::frame::{DepthMap, LabelMap};
use crate::loss::{contour_loss, evaluate_losses, weighted_softmax_ce, LossConfig};
use crate::metrics::ConfusionMatrix;
use crate::net::{depth_batch, predict, Model, ModelConfig, Mode, ParamKind};
use crate::tensor::Tensor;

pub use optim::{adam_step, lr_schedule, AdamState, Schedule};

pub const LOG_FILE: &str = "train.jsonl";
pub const PHASE1_CHECKPOINT: &str = "phase1.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// Fraction of frames, taken from the end of the dataset, held out for
/// validation.
pub const VALIDATION_FRACTION: usize = 10;

pub const EVAL_BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every_steps: u64,
    pub epochs_base: u32,
    pub epochs_finetune: u32,
    pub rotation_range_deg: f64,
    pub depth_noise_sigma_mm: f64,
    pub norm_penalty_weight: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            batch_size: 4,
            lr0: 1e-3,
            decay_factor: 0.8,
            decay_every_steps: 500,
            epochs_base: 20,
            epochs_finetune: 5,
            rotation_range_deg: 15.0,
            depth_noise_sigma_mm: 2.0,
            norm_penalty_weight: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
        }
    }

    pub fn full() -> Self {
        TrainConfig {
            decay_every_steps: 80_000,
            epochs_base: 140,
            epochs_finetune: 10,
            ..Self::toy()
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr0: self.lr0,
            decay_factor: self.decay_factor,
            decay_every_steps: self.decay_every_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("TrainConfig", msg));
        if self.batch_size == 0 || self.decay_every_steps == 0 {
            return bad("batch size and decay interval must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("lr0 must be positive and decay_factor in (0, 1)");
        }
        if self.epochs_base == 0 {
            return bad("at least one base epoch is required");
        }
        if !(self.rotation_range_deg >= 0.0) || !(self.depth_noise_sigma_mm >= 0.0) || !(self.norm_penalty_weight >= 0.0) {
            return bad("rotation, noise and penalty weight must be non-negative");
        }
        self.loss.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// End of an epoch: training means plus validation scores.
    Epoch,
    /// Validation losses of the model as it leaves a phase.
    PhaseEnd,
    /// Validation losses of the same model under the next phase's objective.
    PhaseStart,
}

/// One line of the training log. For `epoch` records the loss fields are
/// means over the epoch's training batches; for phase boundaries they are
/// evaluated on the validation split. `total_loss` never includes the
/// norm penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub kind: RecordKind,
    pub phase: u8,
    pub epoch: u32,
    pub step: u64,
    pub lr: f64,
    pub base_loss: f64,
    pub contour_loss: Option<f64>,
    pub total_loss: f64,
    pub norm_penalty: f64,
    pub val_mean_iou: f64,
    pub val_contour: f64,
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Weighted cross entropy.
    Base,
    /// Cross entropy plus the contour term.
    Finetune,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Base => 1,
            Phase::Finetune => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub base: f64,
    pub contour: Option<f64>,
    pub total: f64,
    pub penalty: f64,
}

/// Model plus optimizer state; one call to [`Trainer::step`] is one update.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
}

fn norm_penalty(g: &mut Graph<f32>, model: &Model<f32>, vars: &[Var], weight: f64) -> Result<Option<Var>> {
    if weight == 0.0 {
        return Ok(None);
    }
    let mut acc: Option<Var> = None;
    for (p, &v) in model.params().iter().zip(vars) {
        if matches!(p.kind, ParamKind::NormScale | ParamKind::NormShift) {
            let sq = g.square(v);
            let s = g.sum(sq);
            acc = Some(match acc {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
    }
    Ok(acc.map(|a| g.scale(a, weight as f32)))
}

fn scalar(g: &Graph<f32>, v: Var) -> Result<f64> {
    Ok(f64::from(g.value(v).item()?))
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params());
        Ok(Trainer { model, adam, cfg, step: 0 })
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.step, &self.cfg.schedule())
    }

    /// Forward, backward and one Adam update on a prepared batch, followed
    /// by a running-statistics update.
    pub fn step(&mut self, depth: &[DepthMap], labels: &[LabelMap], phase: Phase) -> Result<StepLosses> {
        let input: Tensor<f32> = depth_batch(depth)?;
        let mut g = Graph::new();
        let pass = self.model.forward(&mut g, &input, Mode::Train)?;
        let loss_cfg = &self.cfg.loss;
        let base = weighted_softmax_ce(&mut g, pass.logits, labels, loss_cfg)?;
        let (data, contour) = match phase {
            Phase::Base => (base, None),
            Phase::Finetune => {
                let c = contour_loss(&mut g, pass.logits, labels, loss_cfg)?;
                let a = g.scale(base, loss_cfg.alpha as f32);
                let b = g.scale(c, loss_cfg.beta as f32);
                (g.add(a, b)?, Some(c))
            }
        };
        let penalty = norm_penalty(&mut g, &self.model, &pass.params, self.cfg.norm_penalty_weight)?;
        let objective = match penalty {
            Some(p) => g.add(data, p)?,
            None => data,
        };
        let losses = StepLosses {
            base: scalar(&g, base)?,
            contour: contour.map(|c| scalar(&g, c)).transpose()?,
            total: scalar(&g, data)?,
            penalty: penalty.map(|p| scalar(&g, p)).transpose()?.unwrap_or(0.0),
        };
        if !scalar(&g, objective)?.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                step: self.step,
            });
        }
        g.backward(objective)?;
        let grads: Vec<Tensor<f32>> = pass
            .params
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        let lr = self.lr();
        adam_step(self.model.params_mut(), &grads, &mut self.adam, lr)?;
        self.model.update_running_stats(&pass.batch_stats)?;
        self.step += 1;
        Ok(losses)
    }
}

/// Validation scores of a model in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    /// Mean of the hand and object IoU.
    pub mean_iou: f64,
    pub base_loss: f64,
    pub contour: f64,
    pub finetune: f64,
    pub confusion: ConfusionMatrix,
}

pub fn validate(model: &Model<f32>, depth: &[DepthMap], labels: &[LabelMap], loss: &LossConfig) -> Result<Validation> {
    if depth.is_empty() || depth.len() != labels.len() {
        return Err(Error::invalid("validate", "need equally many, and at least one, depth and label frames"));
    }
    let mut cm = ConfusionMatrix::new();
    let (mut ce, mut contour, mut ft) = (0.0, 0.0, 0.0);
    for (d, l) in depth.chunks(EVAL_BATCH).zip(labels.chunks(EVAL_BATCH)) {
        let logits = model.infer(d)?;
        for (p, t) in predict(&logits)?.iter().zip(l) {
            cm.accumulate(p, t)?;
        }
        let r = evaluate_losses(&logits.cast::<f64>(), l, loss)?;
        // Every loss is a per-pixel mean, so chunk means weight by frames.
        let w = d.len() as f64;
        ce += r.softmax_ce * w;
        contour += r.contour * w;
        ft += r.finetune * w;
    }
    let n = depth.len() as f64;
    Ok(Validation {
        mean_iou: cm.hand_object_mean_iou()?,
        base_loss: ce / n,
        contour: contour / n,
        finetune: ft / n,
        confusion: cm,
    })
}

/// Splits `n` frames into training and validation index ranges. The last
/// tenth is held out; below ten frames every frame serves as both.
pub fn split(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let n_val = n / VALIDATION_FRACTION;
    if n_val == 0 {
        (0..n, 0..n)
    } else {
        (0..n - n_val, n - n_val..n)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<LogRecord>,
    /// Validation after phase 1 and after phase 2.
    pub phase1: Validation,
    pub final_validation: Validation,
}

struct LogSink {
    records: Vec<LogRecord>,
    file: Option<File>,
}

impl LogSink {
    fn push(&mut self, rec: LogRecord, path: &Path) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(path, e))?;
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Runs both phases. With `out_dir` the log is appended to
/// [`LOG_FILE`] as it grows and checkpoints are written at each epoch
/// ([`LAST_GOOD_CHECKPOINT`]) and phase boundary.
pub fn train(
    depth: &[DepthMap],
    labels: &[LabelMap],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if depth.is_empty() {
        return Err(Error::EmptyFrame);
    }
    if depth.len() != labels.len() {
        return Err(Error::invalid("train", "depth and label counts differ"));
    }
    cfg.validate()?;
    let (train_idx, val_idx) = split(depth.len());
    let (val_d, val_l) = (&depth[val_idx.clone()], &labels[val_idx]);

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(1);
    let model = Model::new(model_cfg.clone(), &mut init_rng)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;

    let log_path = out_dir.map(|d| d.join(LOG_FILE)).unwrap_or_default();
    let file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(
                OpenOptions::new()
                    .create(true)
                    .write(true)
                    .truncate(true)
                    .open(&log_path)
                    .map_err(|e| Error::io(&log_path, e))?,
            )
        }
        None => None,
    };
    let mut sink = LogSink { records: Vec::new(), file };
    let ckpt = |name: &str, model: &Model<f32>| -> Result<()> {
        match out_dir {
            Some(dir) => save_checkpoint(dir.join(name), model),
            None => Ok(()),
        }
    };

    let mut order: Vec<usize> = train_idx.collect();
    let mut epoch = 0u32;
    let mut phase1 = None;
    for phase in [Phase::Base, Phase::Finetune] {
        let epochs = match phase {
            Phase::Base => cfg.epochs_base,
            Phase::Finetune => cfg.epochs_finetune,
        };
        if phase == Phase::Finetune {
            let v = validate(&trainer.model, val_d, val_l, &cfg.loss)?;
            let penalty = penalty_value(&trainer.model, cfg.norm_penalty_weight)?;
            let common = |kind, phase: Phase, total| LogRecord {
                kind,
                phase: phase.number(),
                epoch,
                step: trainer.step,
                lr: trainer.lr(),
                base_loss: v.base_loss,
                contour_loss: Some(v.contour),
                total_loss: total,
                norm_penalty: penalty,
                val_mean_iou: v.mean_iou,
                val_contour: v.contour,
            };
            sink.push(common(RecordKind::PhaseEnd, Phase::Base, v.base_loss), &log_path)?;
            sink.push(common(RecordKind::PhaseStart, Phase::Finetune, v.finetune), &log_path)?;
            ckpt(PHASE1_CHECKPOINT, &trainer.model)?;
            phase1 = Some(v);
        }
        for _ in 0..epochs {
            epoch += 1;
            order.shuffle(&mut data_rng);
            let lr = trainer.lr();
            let (mut base, mut contour, mut total, mut penalty, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let (mut bd, mut bl) = (Vec::with_capacity(chunk.len()), Vec::with_capacity(chunk.len()));
                for &i in chunk {
                    let (d, l) = augment::augment(
                        &depth[i],
                        &labels[i],
                        cfg.rotation_range_deg,
                        cfg.depth_noise_sigma_mm,
                        &mut data_rng,
                    );
                    bd.push(d);
                    bl.push(l);
                }
                let s = trainer.step(&bd, &bl, phase).map_err(|e| match e {
                    Error::Diverged { step, .. } => Error::Diverged { epoch, step },
                    other => other,
                })?;
                base += s.base;
                contour += s.contour.unwrap_or(0.0);
                total += s.total;
                penalty += s.penalty;
                batches += 1;
            }
            let v = validate(&trainer.model, val_d, val_l, &cfg.loss)?;
            let b = batches.max(1) as f64;
            let rec = LogRecord {
                kind: RecordKind::Epoch,
                phase: phase.number(),
                epoch,
                step: trainer.step,
                lr,
                base_loss: base / b,
                contour_loss: (phase == Phase::Finetune).then_some(contour / b),
                total_loss: total / b,
                norm_penalty: penalty / b,
                val_mean_iou: v.mean_iou,
                val_contour: v.contour,
            };
            if !(rec.total_loss.is_finite() && v.base_loss.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step: trainer.step,
                });
            }
            sink.push(rec, &log_path)?;
            ckpt(LAST_GOOD_CHECKPOINT, &trainer.model)?;
        }
    }
    let final_validation = validate(&trainer.model, val_d, val_l, &cfg.loss)?;
    ckpt(FINAL_CHECKPOINT, &trainer.model)?;
    Ok(TrainOutcome {
        model: trainer.model,
        log: sink.records,
        phase1: phase1.expect("phase 1 always precedes phase 2"),
        final_validation,
    })
}

pub fn penalty_value(model: &Model<f32>, weight: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    Ok(match norm_penalty(&mut g, model, &vars, weight)? {
        Some(p) => scalar(&g, p)?,
        None => 0.0,
    })
}

pub fn log_path(dir: &Path) -> PathBuf {
    dir.join(LOG_FILE)
}
