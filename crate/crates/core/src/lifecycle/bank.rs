use crate::tensor::{Real, Tensor};

use super::LifecycleError;

/// First-layer convolution weights, `N` filters of `C x K x K`.
///
/// Filter `i` is the contiguous slice `[i*C*K*K, (i+1)*C*K*K)`, flattened in
/// `(channel, row, column)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    weights: Tensor<T>,
}

impl<T: Real> FilterBank<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self, LifecycleError> {
        let s = weights.shape();
        if s.len() != 4 || s[2] != s[3] || s[0] == 0 {
            return Err(LifecycleError::Shape(format!(
                "filter bank must be [N,C,K,K] with N >= 1, got {s:?}"
            )));
        }
        Ok(FilterBank { weights })
    }

    pub fn zeros(filters: usize, channels: usize, kernel: usize) -> Self {
        FilterBank {
            weights: Tensor::zeros(&[filters, channels, kernel, kernel]),
        }
    }

    /// Builds a bank from per-filter weight vectors of equal length `C*K*K`.
    pub fn from_filters(channels: usize, kernel: usize, filters: &[Vec<T>]) -> Result<Self, LifecycleError> {
        let len = channels * kernel * kernel;
        if let Some(bad) = filters.iter().find(|f| f.len() != len) {
            return Err(LifecycleError::Shape(format!(
                "filter has {} weights, expected {len}",
                bad.len()
            )));
        }
        let data = filters.iter().flatten().copied().collect();
        let weights = Tensor::from_vec(&[filters.len(), channels, kernel, kernel], data)
            .map_err(|e| LifecycleError::Shape(e.to_string()))?;
        Self::new(weights)
    }

    pub fn len(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Number of weights in one filter, `C*K*K`.
    pub fn filter_len(&self) -> usize {
        self.channels() * self.kernel_size() * self.kernel_size()
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn into_weights(self) -> Tensor<T> {
        self.weights
    }

    pub fn filter(&self, i: usize) -> &[T] {
        let len = self.filter_len();
        &self.weights.data()[i * len..(i + 1) * len]
    }

    pub fn filter_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.filter_len();
        &mut self.weights.data_mut()[i * len..(i + 1) * len]
    }

    pub fn filters(&self) -> impl Iterator<Item = &[T]> {
        self.weights.data().chunks_exact(self.filter_len())
    }

    fn check_index(&self, i: usize) -> Result<(), LifecycleError> {
        if i < self.len() {
            Ok(())
        } else {
            Err(LifecycleError::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
        }
    }

    /// Sum of absolute weights of filter `i`, accumulated in `f64`.
    pub fn l1_norm(&self, i: usize) -> Result<f64, LifecycleError> {
        self.check_index(i)?;
        Ok(filter_l1(self.filter(i)))
    }

    pub fn l1_norms(&self) -> Vec<f64> {
        self.filters().map(filter_l1).collect()
    }

    pub fn cast<U: Real>(&self) -> FilterBank<U> {
        FilterBank {
            weights: self.weights.cast(),
        }
    }
}

pub(crate) fn filter_l1<T: Real>(weights: &[T]) -> f64 {
    weights.iter().map(|w| w.as_f64().abs()).sum()
}

/// Ascending indices of filters whose L1 norm is at most `theta`.
pub fn detect_inactive<T: Real>(bank: &FilterBank<T>, theta: f64) -> Vec<usize> {
    debug_assert!(theta > 0.0, "theta must be positive");
    bank.filters()
        .enumerate()
        .filter(|(_, f)| filter_l1(f) <= theta)
        .map(|(i, _)| i)
        .collect()
}

/// Filter indices by descending L1 norm; equal norms keep ascending index order.
pub fn rank_by_l1<T: Real>(bank: &FilterBank<T>) -> Vec<usize> {
    ranking_from_norms(&bank.l1_norms())
}

pub(crate) fn ranking_from_norms(norms: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    // sort_by is stable, so ties stay in index order.
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_with_norms(norms: &[f64]) -> FilterBank<f64> {
        let filters: Vec<Vec<f64>> = norms
            .iter()
            .map(|&n| {
                let mut f = vec![0.0; 27];
                f[5] = -n;
                f
            })
            .collect();
        FilterBank::from_filters(3, 3, &filters).unwrap()
    }

    #[test]
    fn l1_examples() {
        let bank = bank_with_norms(&[0.0, 0.5]);
        assert_eq!(bank.l1_norm(0).unwrap(), 0.0);
        assert_eq!(bank.l1_norm(1).unwrap(), 0.5);
        assert_eq!(
            bank.l1_norm(2),
            Err(LifecycleError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn detection_examples() {
        let bank = bank_with_norms(&[0.0, 5e-4, 2e-3]);
        assert_eq!(detect_inactive(&bank, 1e-3), vec![0, 1]);
        assert_eq!(detect_inactive(&bank, 1e-6), vec![0]);
        let boundary = bank_with_norms(&[1e-3, 1.0]);
        assert_eq!(detect_inactive(&boundary, 1e-3), vec![0]);
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_by_l1(&bank_with_norms(&[1.0, 3.0, 2.0])), vec![1, 2, 0]);
        assert_eq!(rank_by_l1(&bank_with_norms(&[0.7; 5])), vec![0, 1, 2, 3, 4]);
        assert_eq!(rank_by_l1(&bank_with_norms(&[1.0, 2.0, 1.0, 2.0])), vec![1, 3, 0, 2]);
    }

    #[test]
    fn rejects_malformed_banks() {
        assert!(FilterBank::new(Tensor::<f32>::zeros(&[2, 3, 3])).is_err());
        assert!(FilterBank::new(Tensor::<f32>::zeros(&[2, 3, 3, 2])).is_err());
        assert!(FilterBank::<f32>::from_filters(3, 3, &[vec![0.0; 26]]).is_err());
    }
}
