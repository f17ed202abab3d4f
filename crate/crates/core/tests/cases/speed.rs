//! Wall-clock cost of the residual stage 3 against a full-range stage 3 at
//! the same quarter-scale resolution.

use std::time::{Duration, Instant};

use anystereo::model::FullRangeStage3;
use anystereo::tensor::ops;
use anystereo::{ForwardCtx, StereoModel, Tensor};

#[derive(Debug)]
pub struct SpeedReport {
    pub residual: Duration,
    pub full: Duration,
    pub full_depth: usize,
}

impl SpeedReport {
    pub fn ratio(&self) -> f64 {
        self.full.as_secs_f64() / self.residual.as_secs_f64()
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

pub fn measure(reps: usize) -> SpeedReport {
    let model = StereoModel::<f32>::new(3).expect("model");
    let (h, w) = (128, 256);
    let left = Tensor::from_fn(&[1, 3, h, w], |i| ((i * 7919 % 211) as f32 - 105.0) / 60.0);
    let right = Tensor::from_fn(&[1, 3, h, w], |i| ((i * 7907 % 211) as f32 - 105.0) / 60.0);
    let ctx = ForwardCtx::eval();
    let mut run = model.stages(&left, &right, ctx.clone()).expect("run");
    run.next_stage().expect("stage 1");
    run.next_stage().expect("stage 2");
    let mut pyramid = run.pyramid().expect("features").clone();
    model
        .unet()
        .continue_from(&mut pyramid, anystereo::unet::Scale::S4, &ctx)
        .expect("quarter-scale features");
    let s4 = pyramid.s4.expect("s4");
    let fl = ops::narrow(&s4, 0, 0, 1).expect("left");
    let fr = ops::narrow(&s4, 0, 1, 1).expect("right");
    let coarse = run.coarse().expect("stage-2 map").clone();

    let ablation = FullRangeStage3::new(model.config(), 4).expect("ablation");
    let time = |f: &dyn Fn()| {
        median(
            (0..reps)
                .map(|_| {
                    let t = Instant::now();
                    f();
                    t.elapsed()
                })
                .collect(),
        )
    };
    let residual = time(&|| {
        model.residual_stage(3, &fl, &fr, &coarse, &ctx).expect("residual stage");
    });
    let full = time(&|| {
        ablation.run(&fl, &fr, &ctx).expect("full-range stage");
    });
    SpeedReport {
        residual,
        full,
        full_depth: ablation.depth(),
    }
}
