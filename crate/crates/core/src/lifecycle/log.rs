use serde::{Deserialize, Serialize};

use super::policy::{PolicyKind, Reactivation};

/// State of the bank at one epoch-end check, before any reactivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub l1: Vec<f64>,
    pub inactive: Vec<usize>,
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactivationEvent {
    pub epoch: usize,
    pub target: usize,
    pub source: Option<usize>,
    pub policy: PolicyKind,
    pub l1_before: f64,
    pub l1_after: f64,
}

/// A filter that left the inactive set between two checks without being
/// reactivated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StuckViolation {
    pub filter: usize,
    /// Last check where the filter was inactive.
    pub inactive_at: usize,
    /// Next check, where it was found active.
    pub active_at: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LifecycleLog {
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<ReactivationEvent>,
}

impl LifecycleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_epoch(&mut self, record: EpochRecord) {
        self.epochs.push(record);
    }

    pub fn record_reactivations(&mut self, epoch: usize, policy: PolicyKind, items: Vec<Reactivation>) {
        self.events.extend(items.into_iter().map(|r| ReactivationEvent {
            epoch,
            target: r.target,
            source: r.source,
            policy,
            l1_before: r.l1_before,
            l1_after: r.l1_after,
        }));
    }

    /// `(epoch, inactive count)` per check.
    pub fn inactive_counts(&self) -> Vec<(usize, usize)> {
        self.epochs.iter().map(|e| (e.epoch, e.inactive.len())).collect()
    }

    pub fn events_at(&self, epoch: usize) -> impl Iterator<Item = &ReactivationEvent> {
        self.events.iter().filter(move |e| e.epoch == epoch)
    }

    /// Inactive-to-active transitions not explained by a reactivation event.
    pub fn stuck_violations(&self) -> Vec<StuckViolation> {
        let mut out = Vec::new();
        for pair in self.epochs.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            for &f in &prev.inactive {
                let revived = next.inactive.binary_search(&f).is_err();
                let explained = self.events_at(prev.epoch).any(|e| e.target == f);
                if revived && !explained {
                    out.push(StuckViolation {
                        filter: f,
                        inactive_at: prev.epoch,
                        active_at: next.epoch,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, inactive: &[usize]) -> EpochRecord {
        EpochRecord {
            epoch,
            l1: vec![],
            inactive: inactive.to_vec(),
            ranking: vec![],
        }
    }

    #[test]
    fn revival_without_event_is_a_violation() {
        let mut log = LifecycleLog::new();
        log.record_epoch(rec(1, &[0, 3]));
        log.record_epoch(rec(2, &[3]));
        log.record_epoch(rec(3, &[3]));
        assert_eq!(
            log.stuck_violations(),
            vec![StuckViolation {
                filter: 0,
                inactive_at: 1,
                active_at: 2
            }]
        );
        log.record_reactivations(
            1,
            PolicyKind::DirectedRandom,
            vec![Reactivation {
                target: 0,
                source: None,
                l1_before: 0.0,
                l1_after: 1.0,
            }],
        );
        assert!(log.stuck_violations().is_empty());
        assert_eq!(log.inactive_counts(), vec![(1, 2), (2, 1), (3, 1)]);
    }
}
