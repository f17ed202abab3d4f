//! Anytime contract: with stage 3 held at a gate, polling returns the
//! stage-2 result promptly, and every layer runs exactly once per
//! inference.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use anystereo::data::gen_random_dot_stereogram;
use anystereo::pipeline::{infer_staged, InferOptions};
use anystereo::{LayerCounters, StereoModel, Tensor};

#[derive(Default)]
struct Gate {
    state: Mutex<(bool, bool)>,
    cv: Condvar,
}

impl Gate {
    /// Called by the worker: announce arrival, then wait for release.
    fn arrive_and_wait(&self) {
        let mut s = self.state.lock().unwrap();
        s.0 = true;
        self.cv.notify_all();
        while !s.1 {
            s = self.cv.wait(s).unwrap();
        }
    }

    fn wait_arrival(&self) {
        let mut s = self.state.lock().unwrap();
        while !s.0 {
            s = self.cv.wait(s).unwrap();
        }
    }

    fn release(&self) {
        self.state.lock().unwrap().1 = true;
        self.cv.notify_all();
    }
}

#[derive(Debug)]
pub struct AnytimeReport {
    pub polled_stage: Option<u8>,
    pub max_poll: Duration,
    pub stages: Vec<u8>,
    pub counts: Vec<u32>,
}

impl AnytimeReport {
    pub fn passes(&self) -> bool {
        self.polled_stage == Some(2)
            && self.max_poll < Duration::from_millis(1)
            && self.stages == [1, 2, 3, 4]
            && self.counts.iter().all(|&c| c == 1)
    }
}

pub fn pair(h: usize, w: usize) -> (Tensor, Tensor) {
    let s = gen_random_dot_stereogram(h, w, 8, 77).expect("stereogram");
    let lift = |t: &Tensor| Tensor::new(t.to_vec(), &[1, 3, h, w]).expect("shape");
    (lift(&s.left), lift(&s.right))
}

pub fn gated_run() -> AnytimeReport {
    let model = Arc::new(StereoModel::new(9).expect("model"));
    let (left, right) = pair(64, 128);
    let gate = Arc::new(Gate::default());
    let counters = LayerCounters::new();
    let hook_gate = gate.clone();
    let opts = InferOptions {
        counters: Some(counters.clone()),
        before_stage: Some(Arc::new(move |stage| {
            if stage == 3 {
                hook_gate.arrive_and_wait();
            }
        })),
        ..InferOptions::default()
    };
    let handle = infer_staged(model, left, right, opts).expect("start");
    let mut stages = Vec::new();
    stages.extend(handle.next().map(|r| r.stage));
    stages.extend(handle.next().map(|r| r.stage));
    gate.wait_arrival();

    let mut max_poll = Duration::ZERO;
    let mut polled_stage = None;
    for _ in 0..1000 {
        let t = Instant::now();
        let r = handle.poll();
        max_poll = max_poll.max(t.elapsed());
        polled_stage = r.map(|r| r.stage);
        if polled_stage != Some(2) {
            break;
        }
    }
    gate.release();
    stages.extend(handle.wait().expect("inference").iter().map(|r| r.stage));
    AnytimeReport {
        polled_stage,
        max_poll,
        stages,
        counts: counters.snapshot(),
    }
}
