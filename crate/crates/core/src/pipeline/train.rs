use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blocks::Pass;
use crate::error::{Error, Result};
use crate::eval::{seg_loss, LabelMask};
use crate::network::{save_checkpoint, CheckpointMeta, Model, ModelConfig};
use crate::tensor::{Tape, Tensor};

use super::data::{Dataset, Sample};
use super::evaluate::evaluate_model;
use super::optim::{adamw_step, cosine_lr, AdamConfig, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: AdamConfig,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation Dice improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub train_split: String,
    pub val_split: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            optimizer: AdamConfig::default(),
            lr_min: 1e-6,
            epochs: 100,
            batch_size: 4,
            patience: 15,
            seed: 0,
            train_split: "train".into(),
            val_split: "val".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr.is_finite() && self.lr_min >= 0.0 && self.lr_min < self.lr) {
            return bad(format!("need 0 <= lr_min < lr, got lr_min {} and lr {}", self.lr_min, self.lr));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return bad(format!("optimizer settings out of range: {o:?}"));
        }
        Ok(())
    }
}

/// Outcome of one [`EarlyStopping::update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    Improved,
    Waiting,
    Stop,
}

/// Tracks the best validation score; a score counts as an improvement only
/// when strictly larger.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, best_epoch: 0, bad_epochs: 0 }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> EarlyStop {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            return EarlyStop::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            EarlyStop::Stop
        } else {
            EarlyStop::Waiting
        }
    }
}

/// Stacks `[C, H, W]` images into `[N, C, H, W]`.
pub fn stack_images(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.iter().product::<usize>());
    for s in samples {
        if s.image.shape() != first.as_slice() {
            return Err(Error::shape("stack_images", format!("{:?} vs {first:?}", s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
    }
    let mut shape = vec![samples.len()];
    shape.extend(first);
    Tensor::new(&shape, data)
}

/// Model, optimiser state and schedule position.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model<f32>,
    pub state: OptimizerState<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub total_steps: u64,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig, total_steps: u64) -> Result<Self> {
        cfg.validate()?;
        if total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be positive".into()));
        }
        let state = OptimizerState::new(&model.params);
        Ok(Trainer { model, state, cfg, step: 0, total_steps, epoch: 0 })
    }

    pub fn lr(&self) -> Result<f64> {
        cosine_lr(self.step.min(self.total_steps), self.total_steps, self.cfg.lr, self.cfg.lr_min)
    }

    /// One optimisation step; returns the learning rate used and the loss.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<(f64, f64)> {
        let lr = self.lr()?;
        let x = stack_images(batch)?;
        let masks: Vec<LabelMask> = batch.iter().map(|s| s.mask.clone()).collect();
        let abort = |e: Error, epoch: usize, step: u64| match e {
            Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, step: step as usize },
            e => e,
        };
        let (loss, grads) = {
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let mut pass = Pass::train(self.cfg.seed ^ self.step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (bound, vars) = self.model.forward(&mut tape, xv, &mut pass, true).map_err(|e| abort(e, self.epoch, self.step))?;
            let loss = seg_loss(&mut tape, &vars, &masks).map_err(|e| abort(e, self.epoch, self.step))?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: self.epoch, step: self.step as usize });
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = bound
                .vars()
                .iter()
                .zip(self.model.params.tensors())
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            (value, grads)
        };
        adamw_step(&mut self.model.params, &grads, &mut self.state, lr, &self.cfg.optimizer)?;
        self.step += 1;
        Ok((lr, loss))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps: u64,
    pub best_epoch: usize,
    /// Best validation mean foreground Dice, in percent.
    pub best_metric: f64,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

fn prepare(samples: Vec<Sample>) -> Result<Vec<Sample>> {
    samples
        .into_iter()
        .map(|mut s| {
            let (h, w) = (s.mask.h, s.mask.w);
            let c = s.image.shape()[0];
            let mut data = Vec::with_capacity(c * h * w);
            for ch in s.image.data().chunks(h * w) {
                data.extend(super::preprocess_slice(ch, h, w, (h, w), None)?.into_data());
            }
            s.image = Tensor::new(&[c, h, w], data)?;
            Ok(s)
        })
        .collect()
}

/// Loads a split and min-max normalises every image.
pub fn load_prepared(data: &Dataset, split: &str) -> Result<Vec<Sample>> {
    prepare(data.load_split(split)?)
}

pub(crate) fn check_compatible(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    if m.num_classes != cfg.num_classes {
        return Err(Error::Data(format!("dataset has {} classes, model expects {}", m.num_classes, cfg.num_classes)));
    }
    if [m.h, m.w] != cfg.input_size {
        return Err(Error::Data(format!("dataset images are {}x{}, model expects {:?}", m.h, m.w, cfg.input_size)));
    }
    if cfg.in_channels != 1 {
        return Err(Error::Data(format!("dataset images are single-channel, model expects {}", cfg.in_channels)));
    }
    Ok(())
}

fn log_line(out: &mut impl Write, path: &Path, value: serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::io(path, e))
}

/// Full training loop. Writes `train_log.jsonl`, `best.twmb` and `last.twmb`
/// into `out_dir`.
pub fn run_training(model_cfg: &ModelConfig, train_cfg: &TrainConfig, dataset_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<TrainSummary> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let data = Dataset::open(dataset_dir)?;
    check_compatible(model_cfg, &data)?;
    let train = load_prepared(&data, &train_cfg.train_split)?;
    let val = load_prepared(&data, &train_cfg.val_split)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "split '{}' has {} samples and split '{}' has {}",
            train_cfg.train_split,
            train.len(),
            train_cfg.val_split,
            val.len()
        )));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let best_path = out.join("best.twmb");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);

    let steps_per_epoch = train.len().div_ceil(train_cfg.batch_size) as u64;
    let model = Model::build(model_cfg, model_cfg.seed)?;
    let mut trainer = Trainer::new(model, train_cfg.clone(), steps_per_epoch * train_cfg.epochs as u64)?;
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=train_cfg.epochs {
        trainer.epoch = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (lr, loss) = trainer.train_step(&batch)?;
            loss_sum += loss;
            log_line(&mut log, &log_path, json!({"kind": "step", "epoch": epoch, "step": trainer.step, "lr": lr, "loss": loss}))?;
        }
        let epoch_loss = loss_sum / steps_per_epoch as f64;
        final_loss = epoch_loss;
        let (_, report) = evaluate_model(&trainer.model, &val, &data.manifest.class_names)?;
        let dice = report.mean.dice;
        log_line(
            &mut log,
            &log_path,
            json!({
                "kind": "epoch",
                "epoch": epoch,
                "step": trainer.step,
                "lr": trainer.lr()?,
                "loss": epoch_loss,
                "val_dice": dice,
                "val_iou": report.mean.iou,
                "val_hd95": report.mean.hd95,
            }),
        )?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        epochs_run = epoch;
        let verdict = stopper.update(epoch, dice);
        if verdict == EarlyStop::Improved {
            let meta = CheckpointMeta { epoch, best_metric: dice, step: trainer.step };
            save_checkpoint(&best_path, &trainer.model, Some(&trainer.state), &meta)?;
        }
        if verdict == EarlyStop::Stop {
            stopped_early = epoch < train_cfg.epochs;
            break;
        }
    }
    let meta = CheckpointMeta { epoch: epochs_run, best_metric: stopper.best.unwrap_or(0.0), step: trainer.step };
    save_checkpoint(out.join("last.twmb"), &trainer.model, Some(&trainer.state), &meta)?;
    Ok(TrainSummary {
        epochs_run,
        steps: trainer.step,
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best.unwrap_or(0.0),
        stopped_early,
        final_loss,
        best_checkpoint: best_path,
        log: log_path,
    })
}

/// Parses a JSON-lines training log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<serde_json::Value>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}
