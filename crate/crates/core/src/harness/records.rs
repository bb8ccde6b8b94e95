//! Line-delimited JSON record files.
//!
//! One JSON object per line, discriminated by its `record` field:
//!
//! * `epoch`: `epoch`, `l1` (per-filter norms), `inactive` (ascending
//!   indices), `ranking` (indices by descending L1);
//! * `event`: `epoch`, `target`, `source` (null for random redraws),
//!   `policy`, `l1_before`, `l1_after`;
//! * `cluster`: `n_clusters`, `bandwidth`, `retained_dims`, `active_only`,
//!   `degenerate`, `filters`, `labels`;
//! * `run`: a [`RunRecord`];
//! * `aggregate`: a [`PolicyAggregate`];
//! * `failure`: `policy`, `seed`, `error` for a run that did not finish.
//!
//! A lifecycle log is its `epoch` records in order followed by its `event`
//! records in order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::UniqueCount;
use crate::lifecycle::{EpochRecord, LifecycleLog, PolicyKind, ReactivationEvent};
use crate::report::{PolicyAggregate, RunRecord};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub n_clusters: usize,
    pub bandwidth: f64,
    pub retained_dims: usize,
    pub active_only: bool,
    pub degenerate: bool,
    pub filters: Vec<usize>,
    pub labels: Vec<usize>,
}

impl From<&UniqueCount> for ClusterReport {
    fn from(u: &UniqueCount) -> Self {
        ClusterReport {
            n_clusters: u.n_clusters,
            bandwidth: u.bandwidth,
            retained_dims: u.retained_dims,
            active_only: u.active_only,
            degenerate: u.degenerate,
            filters: u.filters.clone(),
            labels: u
                .clusters
                .as_ref()
                .map_or_else(|| vec![0; u.filters.len()], |c| c.labels.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub policy: PolicyKind,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Epoch(EpochRecord),
    Event(ReactivationEvent),
    Cluster(ClusterReport),
    Run(Box<RunRecord>),
    Aggregate(PolicyAggregate),
    Failure(RunFailure),
}

pub fn encode_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn decode_records(text: &str) -> Result<Vec<Record>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Record(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(encode_records(records).as_bytes())
        .map_err(|e| HarnessError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    decode_records(&text)
}

impl LifecycleLog {
    pub fn to_records(&self) -> Vec<Record> {
        self.epochs
            .iter()
            .cloned()
            .map(Record::Epoch)
            .chain(self.events.iter().cloned().map(Record::Event))
            .collect()
    }

    /// Collects the `epoch` and `event` records, ignoring any others.
    pub fn from_records(records: &[Record]) -> Self {
        let mut log = LifecycleLog::new();
        for r in records {
            match r {
                Record::Epoch(e) => log.epochs.push(e.clone()),
                Record::Event(e) => log.events.push(e.clone()),
                _ => {}
            }
        }
        log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trips_through_text() {
        let mut log = LifecycleLog::new();
        log.record_epoch(EpochRecord {
            epoch: 1,
            l1: vec![0.1 + 0.2, 1e-300, 0.0],
            inactive: vec![2],
            ranking: vec![0, 1, 2],
        });
        log.events.push(ReactivationEvent {
            epoch: 1,
            target: 2,
            source: Some(0),
            policy: PolicyKind::DirectedComplementary,
            l1_before: 0.0,
            l1_after: 0.30000000000000004,
        });
        let text = encode_records(&log.to_records());
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"record\":\"epoch\""));
        let back = LifecycleLog::from_records(&decode_records(&text).unwrap());
        assert_eq!(back, log);
        assert!(decode_records("{\"record\":\"nope\"}").is_err());
    }
}
