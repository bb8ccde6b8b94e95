use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const MAX_ITER: usize = 500;
/// Convergence when a step moves less than this fraction of the bandwidth.
pub const SHIFT_TOL: f64 = 1e-6;
/// Kept modes are at least this fraction of the bandwidth apart.
pub const MERGE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Uniform weight inside the closed ball of radius `bandwidth`.
    ///
    /// The cluster count is not monotone in the bandwidth: a window wide
    /// enough to span two groups can hold a stable mode between them.
    #[default]
    Flat,
    /// `exp(-d^2 / (2 h^2))` over all points. Smoother; in practice the
    /// cluster count falls monotonically as the bandwidth grows.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub modes: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub n_clusters: usize,
    /// Points that hit the iteration cap.
    pub unconverged: Vec<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn climb(points: &[Vec<f64>], start: &[f64], bandwidth: f64, kernel: Kernel) -> (Vec<f64>, bool) {
    let h2 = bandwidth * bandwidth;
    let dim = start.len();
    let mut x = start.to_vec();
    let mut next = vec![0.0; dim];
    for _ in 0..MAX_ITER {
        next.fill(0.0);
        let mut total = 0.0;
        for p in points {
            let d2 = dist2(p, &x);
            let w = match kernel {
                Kernel::Flat if d2 <= h2 => 1.0,
                Kernel::Flat => 0.0,
                Kernel::Gaussian => (-d2 / (2.0 * h2)).exp(),
            };
            if w > 0.0 {
                total += w;
                for (n, &v) in next.iter_mut().zip(p) {
                    *n += w * v;
                }
            }
        }
        if total == 0.0 {
            return (x, false);
        }
        for n in next.iter_mut() {
            *n /= total;
        }
        let shift = dist2(&next, &x).sqrt();
        std::mem::swap(&mut x, &mut next);
        if shift < SHIFT_TOL * bandwidth {
            return (x, true);
        }
    }
    (x, false)
}

/// Mean-shift clustering.
///
/// Every point climbs to a mode; modes are then visited by decreasing
/// population (points within `bandwidth`), ties in lexicographic order, and a
/// mode is kept unless it lies within `bandwidth / 2` of one already kept.
/// Each point is labelled with the kept mode nearest its own converged mode.
/// Cluster numbering follows that visiting order, so it does not depend on
/// input order.
pub fn mean_shift(points: &[Vec<f64>], bandwidth: f64, kernel: Kernel) -> Result<ClusterResult, AnalysisError> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(AnalysisError::InvalidParameter(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    if let Some(dim) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != dim) {
            return Err(AnalysisError::InvalidParameter("points have mixed dimensions".into()));
        }
    }
    let h2 = bandwidth * bandwidth;
    let mut converged_modes = Vec::with_capacity(points.len());
    let mut unconverged = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let (mode, ok) = climb(points, p, bandwidth, kernel);
        if !ok {
            unconverged.push(i);
        }
        converged_modes.push(mode);
    }
    if !unconverged.is_empty() {
        log::warn!(
            "mean shift: {} of {} points did not converge in {MAX_ITER} iterations",
            unconverged.len(),
            points.len()
        );
    }

    let population: Vec<usize> = converged_modes
        .iter()
        .map(|m| points.iter().filter(|p| dist2(p, m) <= h2).count())
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        population[b]
            .cmp(&population[a])
            .then_with(|| lex_cmp(&converged_modes[a], &converged_modes[b]))
    });
    let merge2 = h2 * MERGE_FRACTION * MERGE_FRACTION;
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let m = &converged_modes[i];
        if modes.iter().all(|k| dist2(k, m) > merge2) {
            modes.push(m.clone());
        }
    }

    let labels = converged_modes
        .iter()
        .map(|m| {
            modes
                .iter()
                .enumerate()
                .map(|(j, k)| (j, dist2(k, m)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |(j, _)| j)
        })
        .collect();
    Ok(ClusterResult {
        labels,
        n_clusters: modes.len(),
        modes,
        bandwidth,
        unconverged,
    })
}

/// The `quantile` (nearest rank) of all pairwise Euclidean distances.
pub fn estimate_bandwidth(points: &[Vec<f64>], quantile: f64) -> Result<f64, AnalysisError> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "quantile must be in (0,1], got {quantile}"
        )));
    }
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    let dists = pairwise_distances(points);
    if dists.iter().all(|&d| d == 0.0) {
        return Err(AnalysisError::Degenerate("all pairwise distances are zero".into()));
    }
    Ok(nearest_rank(&dists, quantile))
}

pub(crate) fn pairwise_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            dists.push(dist2(a, b).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    dists
}

/// `sorted` must be ascending and non-empty.
pub(crate) fn nearest_rank(sorted: &[f64], quantile: f64) -> f64 {
    let rank = (quantile * sorted.len() as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
