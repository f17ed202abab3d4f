//! Per-layer execution counters and the forward-pass context.
//!
//! Layer ids follow the network configuration table (1 through 55).

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use anystereo_tensor::nn::Mode;

pub const NUM_LAYERS: usize = 55;

/// Layers that belong to each stage, in execution order.
pub fn stage_layers(stage: u8) -> Vec<u8> {
    match stage {
        1 => (1..=11).chain([20]).chain(23..=30).collect(),
        2 => (12..=15).chain([37, 21]).chain(31..=36).chain([38, 39]).collect(),
        3 => (16..=19).chain([22]).chain(40..=47).collect(),
        4 => (48..=55).collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug)]
pub struct LayerCounters {
    hits: [AtomicU32; NUM_LAYERS + 1],
}

impl Default for LayerCounters {
    fn default() -> Self {
        Self {
            hits: std::array::from_fn(|_| AtomicU32::new(0)),
        }
    }
}

impl LayerCounters {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn hit(&self, layer: u8) {
        self.hits[layer as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self, layer: u8) -> u32 {
        self.hits[layer as usize].load(Ordering::Relaxed)
    }

    /// Counts for layers 1..=55.
    pub fn snapshot(&self) -> Vec<u32> {
        (1..=NUM_LAYERS as u8).map(|l| self.count(l)).collect()
    }

    pub fn executed(&self) -> Vec<u8> {
        (1..=NUM_LAYERS as u8).filter(|&l| self.count(l) > 0).collect()
    }
}

/// Mode plus optional instrumentation, threaded through every forward call.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub mode: Mode,
    counters: Option<Arc<LayerCounters>>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            mode: Mode::EVAL,
            counters: None,
        }
    }

    pub fn train() -> Self {
        Self {
            mode: Mode::TRAIN,
            counters: None,
        }
    }

    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, counters: None }
    }

    pub fn with_counters(mut self, counters: Arc<LayerCounters>) -> Self {
        self.counters = Some(counters);
        self
    }

    pub fn counters(&self) -> Option<&Arc<LayerCounters>> {
        self.counters.as_ref()
    }

    pub(crate) fn hit(&self, layer: u8) {
        if let Some(c) = &self.counters {
            c.hit(layer);
        }
    }
}
