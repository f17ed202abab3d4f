//! End-to-end training with Adam and the joint stage loss.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anystereo_tensor::adam::{Adam, AdamConfig};
use anystereo_tensor::nn::Module;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::counters::ForwardCtx;
use crate::data::{make_batch, StereoSample};
use crate::error::{Result, StereoError};
use crate::loss::{multi_stage_loss, three_pixel_error, LossWeights};
use crate::model::StereoModel;
use crate::pipeline::forward_training;

pub const METRICS_HEADER: &str = "epoch,loss,err_s1,err_s2,err_s3,err_s4";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` once `epoch` epochs have completed.
    Step { epoch: usize, factor: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { epoch: at, factor } if epoch >= at => base * factor,
            LrSchedule::Step { .. } => base,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub weights: LossWeights,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
    /// CSV with one row per epoch when set.
    pub metrics_csv: Option<PathBuf>,
    /// Stop after this many optimizer steps in total, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 4,
            lr: 5e-4,
            schedule: LrSchedule::Step { epoch: 30, factor: 0.1 },
            weights: LossWeights::default(),
            seed: 0,
            checkpoint: None,
            metrics_csv: None,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Held-out 3-pixel error per stage; NaN without a held-out split.
    pub err: [f64; 4],
    /// Loss of every step in the epoch.
    pub step_losses: Vec<f64>,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.loss, self.err[0], self.err[1], self.err[2], self.err[3]
        )
    }
}

/// Mean 3-pixel error of each stage over `samples`, in eval mode.
pub fn evaluate(model: &StereoModel, samples: &[StereoSample], batch: usize) -> Result<[f64; 4]> {
    if samples.is_empty() {
        return Err(StereoError::pre("evaluation set is empty"));
    }
    let mut sums = [0.0; 4];
    let mut count = 0usize;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&StereoSample> = chunk.iter().collect();
        let b = make_batch(&refs)?;
        let outs = model.forward(&b.left, &b.right, ForwardCtx::eval())?;
        let hw = b.mask.numel() / chunk.len();
        for k in 0..chunk.len() {
            let range = k * hw..(k + 1) * hw;
            let mask = &b.mask.data()[range.clone()];
            if mask.iter().all(|&m| m == 0.0) {
                continue;
            }
            for (s, out) in outs.iter().enumerate() {
                sums[s] += three_pixel_error(&out.values.data()[range.clone()], &b.disparity.data()[range.clone()], mask)?;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(StereoError::EmptyMask);
    }
    Ok(sums.map(|s| s / count as f64))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StereoError + '_ {
    move |source| StereoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains `model` in place and returns one log entry per epoch.
pub fn train(model: &StereoModel, train_set: &[StereoSample], heldout: &[StereoSample], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    if train_set.is_empty() {
        return Err(StereoError::pre("training set is empty"));
    }
    if cfg.batch == 0 {
        return Err(StereoError::pre("batch size must be at least 1"));
    }
    let mut csv = match &cfg.metrics_csv {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p).map_err(io_err(p))?);
            writeln!(f, "{METRICS_HEADER}").map_err(io_err(p))?;
            Some((f, p))
        }
        None => None,
    };

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;

    for epoch in 0..cfg.epochs {
        adam.set_lr(cfg.schedule.lr_at(cfg.lr, epoch));
        order.shuffle(&mut rng);
        let mut step_losses = Vec::new();
        for (step, idx) in order.chunks(cfg.batch).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let refs: Vec<&StereoSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let b = make_batch(&refs)?;
            let outs = forward_training(model, &b.left, &b.right, ForwardCtx::train())?;
            let outs: Vec<_> = outs.into_iter().map(|d| d.values).collect();
            let loss = multi_stage_loss(&outs, &b.disparity, &b.mask, &cfg.weights)?;
            let value = loss.item().expect("scalar loss") as f64;
            if !value.is_finite() {
                return Err(StereoError::Diverged {
                    epoch,
                    step,
                    loss: value,
                });
            }
            let grads = loss.backward()?;
            adam.step(&model.trainable_params(), &grads)?;
            step_losses.push(value);
            steps += 1;
        }
        let loss = if step_losses.is_empty() {
            f64::NAN
        } else {
            step_losses.iter().sum::<f64>() / step_losses.len() as f64
        };
        let err = if heldout.is_empty() {
            [f64::NAN; 4]
        } else {
            evaluate(model, heldout, cfg.batch)?
        };
        let log = EpochLog {
            epoch,
            loss,
            err,
            step_losses,
        };
        if let Some((f, p)) = csv.as_mut() {
            writeln!(f, "{}", log.csv_row()).map_err(io_err(p))?;
            f.flush().map_err(io_err(p))?;
        }
        if let Some(p) = &cfg.checkpoint {
            model.save(p)?;
        }
        logs.push(log);
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    Ok(logs)
}
