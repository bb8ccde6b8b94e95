//! Redundancy analysis of a filter bank: PCA over the flattened filters, then
//! mean-shift clustering in the retained subspace. The cluster count is the
//! number of unique filter patterns.

mod mean_shift;
mod pca;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifecycle::{detect_inactive, FilterBank};
use crate::tensor::Real;

pub use mean_shift::{estimate_bandwidth, mean_shift, ClusterResult, Kernel, MAX_ITER, MERGE_FRACTION, SHIFT_TOL};
pub use pca::{pca, PcaResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One row per filter, flattened in `(channel, row, column)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPointSet {
    pub points: DMatrix<f64>,
    /// Bank index of each row.
    pub filters: Vec<usize>,
}

impl FilterPointSet {
    /// Rows for every filter, or only those with `mask[i] == true`.
    pub fn from_bank<T: Real>(bank: &FilterBank<T>, mask: Option<&[bool]>) -> Self {
        let filters: Vec<usize> = (0..bank.len()).filter(|&i| mask.is_none_or(|m| m[i])).collect();
        let d = bank.filter_len();
        let points = DMatrix::from_fn(filters.len(), d, |r, c| bank.filter(filters[r])[c].as_f64());
        FilterPointSet { points, filters }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        FilterPointSet {
            points: DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]),
            filters: (0..rows.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub variance_target: f64,
    pub quantile: f64,
    pub kernel: Kernel,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            variance_target: 0.95,
            quantile: 0.3,
            kernel: Kernel::Flat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueCount {
    pub n_clusters: usize,
    /// Bank indices of the clustered filters; `clusters.labels` aligns with it.
    pub filters: Vec<usize>,
    pub retained_dims: usize,
    pub bandwidth: f64,
    pub active_only: bool,
    /// Set when the points were all identical (or fewer than two), so no
    /// clustering ran.
    pub degenerate: bool,
    pub clusters: Option<ClusterResult>,
}

/// flatten -> PCA -> bandwidth estimate -> mean shift.
///
/// With `active_only`, filters with L1 norm at most `theta` are left out;
/// otherwise they are clustered too and usually share a cluster near the
/// origin. If the bandwidth quantile lands on a zero distance (many exact
/// duplicates), the quantile is taken over the positive distances instead.
pub fn count_unique_patterns<T: Real>(
    bank: &FilterBank<T>,
    theta: f64,
    cfg: &AnalysisConfig,
    active_only: bool,
) -> Result<UniqueCount, AnalysisError> {
    let mask = active_only.then(|| {
        let mut m = vec![true; bank.len()];
        for i in detect_inactive(bank, theta) {
            m[i] = false;
        }
        m
    });
    let set = FilterPointSet::from_bank(bank, mask.as_deref());
    let trivial = |n: usize, dims: usize| UniqueCount {
        n_clusters: n,
        filters: set.filters.clone(),
        retained_dims: dims,
        bandwidth: 0.0,
        active_only,
        degenerate: true,
        clusters: None,
    };
    if set.len() < 2 {
        return Ok(trivial(set.len(), 0));
    }
    let reduced = pca(&set, cfg.variance_target)?;
    if reduced.degenerate {
        return Ok(trivial(1, 0));
    }
    let rows = matrix_rows(&reduced.projected);
    let dists = mean_shift::pairwise_distances(&rows);
    let mut bandwidth = mean_shift::nearest_rank(&dists, cfg.quantile);
    if bandwidth == 0.0 {
        let positive: Vec<f64> = dists.iter().copied().filter(|&d| d > 0.0).collect();
        bandwidth = mean_shift::nearest_rank(&positive, cfg.quantile);
    }
    let clusters = mean_shift(&rows, bandwidth, cfg.kernel)?;
    Ok(UniqueCount {
        n_clusters: clusters.n_clusters,
        filters: set.filters.clone(),
        retained_dims: reduced.retained(),
        bandwidth,
        active_only,
        degenerate: false,
        clusters: Some(clusters),
    })
}
