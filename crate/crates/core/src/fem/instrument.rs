use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Kinds of full-order operations that are counted at the point of execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Solve with the parameter-dependent system matrix `a(·,·;q)`.
    SystemSolve,
    /// Riesz-representative solve in the state inner product.
    RieszSolve,
    /// Solve with the parameter-space Gram matrix.
    MetricSolve,
    /// Matrix-free application of `B_u`.
    BApply,
    /// Matrix-free application of `B_u^T`.
    BtApply,
}

#[derive(Debug, Default)]
struct Tallies {
    system: AtomicU64,
    riesz: AtomicU64,
    metric: AtomicU64,
    b: AtomicU64,
    bt: AtomicU64,
}

/// Shared counting hook. Clones observe the same tallies, so every solver
/// object built for one problem instance reports into one place.
#[derive(Debug, Clone, Default)]
pub struct Instrumentation(Arc<Tallies>);

/// Snapshot of [`Instrumentation`] tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstrumentCounts {
    pub system_solves: u64,
    pub riesz_solves: u64,
    pub metric_solves: u64,
    pub b_applications: u64,
    pub bt_applications: u64,
}

impl Instrumentation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: Event) {
        let slot = match event {
            Event::SystemSolve => &self.0.system,
            Event::RieszSolve => &self.0.riesz,
            Event::MetricSolve => &self.0.metric,
            Event::BApply => &self.0.b,
            Event::BtApply => &self.0.bt,
        };
        slot.fetch_add(1, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> InstrumentCounts {
        InstrumentCounts {
            system_solves: self.0.system.load(Ordering::SeqCst),
            riesz_solves: self.0.riesz.load(Ordering::SeqCst),
            metric_solves: self.0.metric.load(Ordering::SeqCst),
            b_applications: self.0.b.load(Ordering::SeqCst),
            bt_applications: self.0.bt.load(Ordering::SeqCst),
        }
    }
}

impl InstrumentCounts {
    pub fn b_total(&self) -> u64 {
        self.b_applications + self.bt_applications
    }

    pub fn since(&self, earlier: &InstrumentCounts) -> InstrumentCounts {
        InstrumentCounts {
            system_solves: self.system_solves - earlier.system_solves,
            riesz_solves: self.riesz_solves - earlier.riesz_solves,
            metric_solves: self.metric_solves - earlier.metric_solves,
            b_applications: self.b_applications - earlier.b_applications,
            bt_applications: self.bt_applications - earlier.bt_applications,
        }
    }
}
