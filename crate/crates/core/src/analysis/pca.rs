use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{AnalysisError, FilterPointSet};

/// Relative eigenvalue mass below which the data is treated as a single point.
const DEGENERATE_EPS: f64 = 1e-24;

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Centered points projected on the retained components, `N x r`.
    pub projected: DMatrix<f64>,
    /// Retained components as orthonormal columns, `D x r`.
    pub components: DMatrix<f64>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvalues[i] / sum(eigenvalues)`; empty when degenerate.
    pub explained_ratio: Vec<f64>,
    pub mean: DVector<f64>,
    /// True when every point is identical; zero components are retained.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn retained(&self) -> usize {
        self.components.ncols()
    }

    pub fn retained_ratio(&self) -> f64 {
        self.explained_ratio[..self.retained()].iter().sum()
    }

    /// Maps projected points back to the original space (uncentered).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut back = &self.projected * self.components.transpose();
        for mut row in back.row_iter_mut() {
            row += self.mean.transpose();
        }
        back
    }
}

/// Principal components of the sample covariance (`n - 1` denominator),
/// keeping the fewest components whose cumulative explained variance reaches
/// `variance_target`.
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca(points: &FilterPointSet, variance_target: f64) -> Result<PcaResult, AnalysisError> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "variance target must be in (0,1], got {variance_target}"
        )));
    }
    let x = &points.points;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);

    if total <= DEGENERATE_EPS * scale * scale * d as f64 {
        return Ok(PcaResult {
            projected: DMatrix::zeros(n, 0),
            components: DMatrix::zeros(d, 0),
            eigenvalues,
            explained_ratio: Vec::new(),
            mean,
            degenerate: true,
        });
    }

    let explained_ratio: Vec<f64> = eigenvalues.iter().map(|v| v / total).collect();
    let mut retained = 0;
    let mut cumulative = 0.0;
    for r in &explained_ratio {
        retained += 1;
        cumulative += r;
        if cumulative >= variance_target - 1e-12 {
            break;
        }
    }

    let mut components = DMatrix::zeros(d, retained);
    for (j, &src) in order.iter().take(retained).enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        components.set_column(j, &col);
    }
    let projected = &centered * &components;
    Ok(PcaResult {
        projected,
        components,
        eigenvalues,
        explained_ratio,
        mean,
        degenerate: false,
    })
}
