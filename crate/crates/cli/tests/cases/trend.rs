//! Trains the desk-scale recipe on synthetic stereograms and checks that
//! held-out 3-pixel error falls from stage to stage.

use std::fmt;

use anystereo::data::Dataset;
use anystereo::train::{train, LrSchedule, TrainConfig};
use anystereo::{Result, StereoModel};

/// Allowed increase between adjacent stages.
pub const SLACK: f64 = 0.005;
/// Required stage-4 error as a fraction of stage-1 error.
pub const RATIO: f64 = 0.7;

#[derive(Debug, Clone, Copy)]
pub struct Recipe {
    pub height: usize,
    pub width: usize,
    pub max_disp: usize,
    pub train: usize,
    pub heldout: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub decay_at: usize,
    pub seed: u64,
}

pub const DESK: Recipe = Recipe {
    height: 64,
    width: 128,
    max_disp: 24,
    train: 2048,
    heldout: 64,
    epochs: 3,
    batch: 4,
    lr: 1e-3,
    decay_at: 2,
    seed: 42,
};

#[derive(Debug, Clone)]
pub struct TrendReport {
    pub err: [f64; 4],
    pub first_epoch: [f64; 4],
    pub recipe: Recipe,
}

impl TrendReport {
    pub fn monotone(&self) -> bool {
        self.err.windows(2).all(|w| w[1] <= w[0] + SLACK)
    }

    pub fn passes(&self) -> bool {
        self.monotone() && self.err[3] <= RATIO * self.err[0]
    }
}

impl fmt::Display for TrendReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |e: &[f64; 4]| e.map(|v| format!("{:.1}", v * 100.0)).join(" -> ");
        let r = &self.recipe;
        write!(
            f,
            "held-out error {} % (after epoch 1: {} %), s4/s1 = {:.2}; {} samples at {}x{}, max disparity {}, {} epochs",
            pct(&self.err),
            pct(&self.first_epoch),
            self.err[3] / self.err[0],
            r.train,
            r.height,
            r.width,
            r.max_disp,
            r.epochs
        )
    }
}

pub fn run_recipe(r: Recipe) -> Result<TrendReport> {
    let all = Dataset::synthetic(r.train + r.heldout, r.height, r.width, r.max_disp, r.seed)?;
    let (train_set, heldout) = all.split(r.heldout);
    let model = StereoModel::new(r.seed)?;
    let cfg = TrainConfig {
        epochs: r.epochs,
        batch: r.batch,
        lr: r.lr,
        schedule: LrSchedule::Step {
            epoch: r.decay_at,
            factor: 0.1,
        },
        seed: r.seed,
        ..TrainConfig::default()
    };
    let logs = train(&model, &train_set.samples, &heldout.samples, &cfg)?;
    let first = logs.first().expect("at least one epoch").err;
    let last = logs.last().expect("at least one epoch").err;
    Ok(TrendReport {
        err: last,
        first_epoch: first,
        recipe: r,
    })
}

pub fn run() -> Result<TrendReport> {
    run_recipe(DESK)
}
