//! Element accounting for large per-stage tensors.
//!
//! Tensors registered with a [`MemoryLedger`] hold a [`Lease`] that is
//! released on drop, so the ledger tracks live and peak element counts.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    CostVolume,
    Probability,
}

#[derive(Debug, Default)]
pub struct MemoryLedger {
    cost_live: AtomicUsize,
    cost_peak: AtomicUsize,
    total_live: AtomicUsize,
    total_peak: AtomicUsize,
}

impl MemoryLedger {
    pub fn new() -> Arc<Self> {
        Arc::new(MemoryLedger::default())
    }

    pub fn lease(self: &Arc<Self>, kind: TensorKind, elements: usize) -> Lease {
        if kind == TensorKind::CostVolume {
            let now = self.cost_live.fetch_add(elements, Ordering::SeqCst) + elements;
            self.cost_peak.fetch_max(now, Ordering::SeqCst);
        }
        let now = self.total_live.fetch_add(elements, Ordering::SeqCst) + elements;
        self.total_peak.fetch_max(now, Ordering::SeqCst);
        Lease {
            ledger: Arc::clone(self),
            kind,
            elements,
        }
    }

    /// Live cost-volume elements.
    pub fn cost_live(&self) -> usize {
        self.cost_live.load(Ordering::SeqCst)
    }

    /// Peak live cost-volume elements.
    pub fn cost_peak(&self) -> usize {
        self.cost_peak.load(Ordering::SeqCst)
    }

    /// Live elements over all tracked tensor kinds.
    pub fn total_live(&self) -> usize {
        self.total_live.load(Ordering::SeqCst)
    }

    /// Peak live elements over all tracked tensor kinds.
    pub fn total_peak(&self) -> usize {
        self.total_peak.load(Ordering::SeqCst)
    }
}

/// Registration of one tensor; releases its elements on drop.
#[derive(Debug)]
pub struct Lease {
    ledger: Arc<MemoryLedger>,
    kind: TensorKind,
    elements: usize,
}

impl Clone for Lease {
    fn clone(&self) -> Self {
        self.ledger.lease(self.kind, self.elements)
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        if self.kind == TensorKind::CostVolume {
            self.ledger.cost_live.fetch_sub(self.elements, Ordering::SeqCst);
        }
        self.ledger.total_live.fetch_sub(self.elements, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracks_live_and_peak() {
        let ledger = MemoryLedger::new();
        let a = ledger.lease(TensorKind::CostVolume, 10);
        let b = ledger.lease(TensorKind::Probability, 4);
        assert_eq!(ledger.cost_live(), 10);
        assert_eq!(ledger.total_live(), 14);
        let c = a.clone();
        assert_eq!(ledger.cost_peak(), 20);
        drop((a, b, c));
        assert_eq!(ledger.total_live(), 0);
        assert_eq!(ledger.total_peak(), 24);
        let _d = ledger.lease(TensorKind::CostVolume, 5);
        assert_eq!(ledger.cost_peak(), 20);
    }
}
