//! Anytime inference: stages run on a worker thread and each result is
//! published as soon as it is ready.

use std::fmt;
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::counters::{ForwardCtx, LayerCounters};
use crate::dispnet::DisparityMap;
use crate::error::{Result, StereoError};
use crate::model::{check_pair, StereoModel, NUM_STAGES};
use crate::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct StageResult {
    /// Full-resolution disparity.
    pub disparity: DisparityMap<f32>,
    pub stage: u8,
    /// Time since inference started.
    pub elapsed: Duration,
}

/// Called on the worker thread right before a stage starts.
pub type StageHook = Arc<dyn Fn(u8) + Send + Sync>;

#[derive(Clone)]
pub struct InferOptions {
    /// Last stage to compute (1 to 4).
    pub max_stage: u8,
    pub counters: Option<Arc<LayerCounters>>,
    pub before_stage: Option<StageHook>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            max_stage: NUM_STAGES,
            counters: None,
            before_stage: None,
        }
    }
}

impl fmt::Debug for InferOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InferOptions")
            .field("max_stage", &self.max_stage)
            .field("counters", &self.counters.is_some())
            .field("before_stage", &self.before_stage.is_some())
            .finish()
    }
}

impl InferOptions {
    pub fn up_to(max_stage: u8) -> Self {
        Self {
            max_stage,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=NUM_STAGES).contains(&self.max_stage) {
            return Err(StereoError::pre(format!(
                "stage must be between 1 and {NUM_STAGES}, got {}",
                self.max_stage
            )));
        }
        Ok(())
    }
}

/// Runs stages `1..=opts.max_stage` on the calling thread, handing each
/// result to `on_stage` as soon as it is computed.
pub fn run_staged(
    model: &StereoModel<f32>,
    left: &Tensor,
    right: &Tensor,
    opts: &InferOptions,
    mut on_stage: impl FnMut(StageResult),
) -> Result<()> {
    opts.validate()?;
    let start = Instant::now();
    let mut ctx = ForwardCtx::eval();
    if let Some(c) = &opts.counters {
        ctx = ctx.with_counters(c.clone());
    }
    let mut run = model.stages(left, right, ctx)?;
    for stage in 1..=opts.max_stage {
        if let Some(hook) = &opts.before_stage {
            hook(stage);
        }
        let disparity = run.next_stage()?.expect("stage within range");
        on_stage(StageResult {
            disparity,
            stage,
            elapsed: start.elapsed(),
        });
    }
    Ok(())
}

/// Collects the results of [`run_staged`].
pub fn infer_blocking(model: &StereoModel<f32>, left: &Tensor, right: &Tensor, opts: &InferOptions) -> Result<Vec<StageResult>> {
    let mut out = Vec::new();
    run_staged(model, left, right, opts, |r| out.push(r))?;
    Ok(out)
}

/// Starts inference on a worker thread. Shape problems are reported here,
/// before any stage runs.
pub fn infer_staged(model: Arc<StereoModel<f32>>, left: Tensor, right: Tensor, opts: InferOptions) -> Result<InferenceHandle> {
    opts.validate()?;
    check_pair(&left, &right)?;
    let latest: Arc<Mutex<Option<StageResult>>> = Arc::new(Mutex::new(None));
    let (tx, rx) = mpsc::channel();
    let slot = latest.clone();
    let worker = std::thread::Builder::new()
        .name("anytime-inference".into())
        .spawn(move || {
            run_staged(&model, &left, &right, &opts, |r| {
                *slot.lock() = Some(r.clone());
                // The receiver may be gone if the caller only polls.
                let _ = tx.send(r);
            })
        })
        .map_err(|e| StereoError::pre(format!("cannot start inference thread: {e}")))?;
    Ok(InferenceHandle {
        latest,
        rx,
        worker: Some(worker),
    })
}

pub struct InferenceHandle {
    latest: Arc<Mutex<Option<StageResult>>>,
    rx: Receiver<StageResult>,
    worker: Option<JoinHandle<Result<()>>>,
}

impl InferenceHandle {
    /// Most recently completed stage, without waiting for the one in
    /// progress.
    pub fn poll(&self) -> Option<StageResult> {
        self.latest.lock().clone()
    }

    /// Blocks until the next stage completes; `None` once the worker is done.
    pub fn next(&self) -> Option<StageResult> {
        self.rx.recv().ok()
    }

    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Waits for the worker and returns the results not yet taken with
    /// [`next`](Self::next).
    pub fn wait(mut self) -> Result<Vec<StageResult>> {
        let rest: Vec<StageResult> = self.rx.iter().collect();
        match self.worker.take().map(JoinHandle::join) {
            Some(Ok(r)) => r?,
            Some(Err(_)) => return Err(StereoError::pre("inference thread panicked")),
            None => {}
        }
        Ok(rest)
    }
}

/// All four outputs with the graph retained for a joint loss.
pub fn forward_training<T: Real>(
    model: &StereoModel<T>,
    left: &Tensor<T>,
    right: &Tensor<T>,
    ctx: ForwardCtx,
) -> Result<[DisparityMap<T>; 4]> {
    model.forward(left, right, ctx)
}
