use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Real;

use super::bank::{filter_l1, FilterBank};
use super::LifecycleError;

/// Redraw attempts for the random policy before giving up on a filter.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baseline,
    DirectedRandom,
    DirectedRedundant,
    DirectedComplementary,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Baseline,
        PolicyKind::DirectedRandom,
        PolicyKind::DirectedRedundant,
        PolicyKind::DirectedComplementary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "baseline",
            PolicyKind::DirectedRandom => "directed_random",
            PolicyKind::DirectedRedundant => "directed_redundant",
            PolicyKind::DirectedComplementary => "directed_complementary",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = LifecycleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LifecycleError::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

/// Which reactivation policy runs at epoch ends, and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Inactivity threshold on the L1 norm (inclusive).
    pub theta: f64,
    /// Mean of the redraw distribution for `directed_random`.
    pub mu: f64,
    /// Standard deviation of the redraw distribution for `directed_random`.
    pub sigma: f64,
    /// Check every this many epochs; the last epoch is always checked.
    pub check_every: usize,
    /// RNG stream id the hook draws from.
    pub stream: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Baseline,
            theta: 1e-3,
            mu: 0.0,
            sigma: 0.1,
            check_every: 1,
            stream: crate::rng::HOOK_STREAM,
        }
    }
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LifecycleError> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(LifecycleError::InvalidConfig(format!(
                "theta must be > 0, got {}",
                self.theta
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(LifecycleError::InvalidConfig(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(LifecycleError::InvalidConfig("mu must be finite".into()));
        }
        if self.check_every == 0 {
            return Err(LifecycleError::InvalidConfig("check_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One overwritten filter. `source` is `None` for random redraws.
#[derive(Debug, Clone, PartialEq)]
pub struct Reactivation {
    pub target: usize,
    pub source: Option<usize>,
    pub l1_before: f64,
    pub l1_after: f64,
}

fn check_inactive<T: Real>(bank: &FilterBank<T>, inactive: &[usize]) -> Result<(), LifecycleError> {
    if let Some(&index) = inactive.iter().find(|&&i| i >= bank.len()) {
        return Err(LifecycleError::IndexOutOfRange { index, len: bank.len() });
    }
    if inactive.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LifecycleError::InvalidConfig(
            "inactive set must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Redraws each inactive filter i.i.d. from `N(mu, sigma^2)` until its L1
/// norm exceeds `theta`.
pub fn reactivate_random<T: Real, R: Rng + ?Sized>(
    bank: &mut FilterBank<T>,
    inactive: &[usize],
    mu: f64,
    sigma: f64,
    theta: f64,
    rng: &mut R,
) -> Result<Vec<Reactivation>, LifecycleError> {
    check_inactive(bank, inactive)?;
    let normal =
        Normal::new(mu, sigma).map_err(|e| LifecycleError::InvalidConfig(format!("bad redraw distribution: {e}")))?;
    let mut events = Vec::with_capacity(inactive.len());
    for &target in inactive {
        let l1_before = filter_l1(bank.filter(target));
        let filter = bank.filter_mut(target);
        let mut attempts = 0;
        let l1_after = loop {
            if attempts == MAX_REDRAWS {
                return Err(LifecycleError::ResampleExhausted { target, attempts });
            }
            attempts += 1;
            for w in filter.iter_mut() {
                *w = T::lit(normal.sample(rng));
            }
            let l1 = filter_l1(filter);
            if l1 > theta {
                break l1;
            }
        };
        events.push(Reactivation {
            target,
            source: None,
            l1_before,
            l1_after,
        });
    }
    Ok(events)
}

/// Copies the `k` strongest active filters onto the `k` inactive ones through
/// a uniformly random bijection.
pub fn reactivate_redundant<T: Real, R: Rng + ?Sized>(
    bank: &mut FilterBank<T>,
    inactive: &[usize],
    ranking: &[usize],
    rng: &mut R,
) -> Result<Vec<Reactivation>, LifecycleError> {
    transplant(bank, inactive, ranking, rng, false)
}

/// Like [`reactivate_redundant`], but each target receives the elementwise
/// negation of its source.
pub fn reactivate_complementary<T: Real, R: Rng + ?Sized>(
    bank: &mut FilterBank<T>,
    inactive: &[usize],
    ranking: &[usize],
    rng: &mut R,
) -> Result<Vec<Reactivation>, LifecycleError> {
    transplant(bank, inactive, ranking, rng, true)
}

/// Chooses sources for the inactive set: the top-`k` active filters of
/// `ranking`, shuffled. Returned in target order.
///
/// With fewer active than inactive filters every active filter is used once
/// and each remaining target draws uniformly from the active set; the pairing
/// is then shuffled as a whole. Fails only when no filter is active.
pub fn select_sources<R: Rng + ?Sized>(
    len: usize,
    inactive: &[usize],
    ranking: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>, LifecycleError> {
    let mut seen = vec![false; len];
    if ranking.len() != len
        || ranking
            .iter()
            .any(|&i| i >= len || std::mem::replace(&mut seen[i], true))
    {
        return Err(LifecycleError::InvalidRanking { len });
    }
    let k = inactive.len();
    let mut sources: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|i| inactive.binary_search(i).is_err())
        .take(k)
        .collect();
    let active = sources.len();
    if active < k {
        if active == 0 {
            return Err(LifecycleError::NotEnoughActive { inactive: k, active });
        }
        log::debug!("{k} inactive filters but only {active} active; reusing sources");
        for _ in active..k {
            sources.push(sources[rng.random_range(0..active)]);
        }
    }
    // Extension point: a once-per-source constraint across epochs would
    // filter `ranking` here.
    sources.shuffle(rng);
    Ok(sources)
}

fn transplant<T: Real, R: Rng + ?Sized>(
    bank: &mut FilterBank<T>,
    inactive: &[usize],
    ranking: &[usize],
    rng: &mut R,
    negate: bool,
) -> Result<Vec<Reactivation>, LifecycleError> {
    check_inactive(bank, inactive)?;
    if inactive.is_empty() {
        return Ok(Vec::new());
    }
    let sources = select_sources(bank.len(), inactive, ranking, rng)?;
    let len = bank.filter_len();
    let mut events = Vec::with_capacity(inactive.len());
    for (&target, &source) in inactive.iter().zip(&sources) {
        let l1_before = filter_l1(bank.filter(target));
        let data = bank.weights_mut().data_mut();
        let (src, dst) = (source * len, target * len);
        for j in 0..len {
            let w = data[src + j];
            data[dst + j] = if negate { -w } else { w };
        }
        events.push(Reactivation {
            target,
            source: Some(source),
            l1_before,
            l1_after: filter_l1(bank.filter(target)),
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::rank_by_l1;
    use crate::rng;

    fn bank_64() -> FilterBank<f32> {
        // Filters 2, 10, 15 are zero; 63, 57, 52 are the three strongest.
        let filters: Vec<Vec<f32>> = (0..64)
            .map(|i| {
                let scale = match i {
                    2 | 10 | 15 => 0.0,
                    63 => 0.9,
                    57 => 0.8,
                    52 => 0.7,
                    _ => (i + 1) as f32 / 1000.0,
                };
                (0..27).map(|j| if j % 2 == 0 { scale } else { -scale }).collect()
            })
            .collect();
        FilterBank::from_filters(3, 3, &filters).unwrap()
    }

    #[test]
    fn redundant_worked_example() {
        let mut bank = bank_64();
        let inactive = crate::lifecycle::detect_inactive(&bank, 1e-3);
        assert_eq!(inactive, vec![2, 10, 15]);
        let ranking = rank_by_l1(&bank);
        assert_eq!(&ranking[..3], &[63, 57, 52]);
        let before = bank.clone();
        let events = reactivate_redundant(&mut bank, &inactive, &ranking, &mut rng::stream(3, 1)).unwrap();
        let mut used: Vec<usize> = events.iter().map(|e| e.source.unwrap()).collect();
        used.sort();
        assert_eq!(used, vec![52, 57, 63]);
        for e in &events {
            assert_eq!(bank.filter(e.target), before.filter(e.source.unwrap()));
            assert_eq!(e.l1_after, before.l1_norm(e.source.unwrap()).unwrap());
        }
    }

    #[test]
    fn single_target_takes_strongest() {
        let mut bank = FilterBank::from_filters(1, 1, &[vec![0.0f64], vec![0.4], vec![-0.9]]).unwrap();
        let ranking = rank_by_l1(&bank);
        let events = reactivate_redundant(&mut bank, &[0], &ranking, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(events[0].source, Some(2));
        assert_eq!(bank.filter(0), &[-0.9]);
    }

    #[test]
    fn complement_negates_source() {
        let mut bank = FilterBank::from_filters(1, 1, &[vec![0.0f32], vec![0.1], vec![-0.2]]).unwrap();
        let ranking = rank_by_l1(&bank);
        let events = reactivate_complementary(&mut bank, &[0], &ranking, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(events[0].source, Some(2));
        assert_eq!(bank.filter(0), &[0.2]);
        assert_eq!(bank.filter(0)[0] + bank.filter(2)[0], 0.0);
        assert_eq!(events[0].l1_after.to_bits(), bank.l1_norm(2).unwrap().to_bits());
    }

    #[test]
    fn surplus_targets_reuse_active_sources() {
        let filters: Vec<Vec<f32>> = [0.0, 0.0, 0.0, 0.5, 0.0, 1.0].iter().map(|&v| vec![v]).collect();
        let mut bank = FilterBank::from_filters(1, 1, &filters).unwrap();
        let ranking = rank_by_l1(&bank);
        let inactive = [0, 1, 2, 4];
        let events = reactivate_complementary(&mut bank, &inactive, &ranking, &mut rng::stream(0, 0)).unwrap();
        let mut used: Vec<usize> = events.iter().map(|e| e.source.unwrap()).collect();
        used.sort();
        used.dedup();
        assert_eq!(used, vec![3, 5]);
        for e in &events {
            assert_eq!(bank.filter(e.target)[0], -bank.filter(e.source.unwrap())[0]);
        }
    }

    #[test]
    fn no_active_filter_is_a_policy_error() {
        let mut bank = FilterBank::from_filters(1, 1, &[vec![0.0f32], vec![0.0]]).unwrap();
        let ranking = rank_by_l1(&bank);
        let err = reactivate_redundant(&mut bank, &[0, 1], &ranking, &mut rng::stream(0, 0)).unwrap_err();
        assert_eq!(err, LifecycleError::NotEnoughActive { inactive: 2, active: 0 });
    }

    #[test]
    fn random_redraw_leaves_others_alone() {
        let mut bank = bank_64();
        let before = bank.clone();
        let events = reactivate_random(&mut bank, &[10], 0.0, 0.1, 1e-3, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(events.len(), 1);
        assert!(events[0].l1_after > 1e-3);
        for i in (0..64).filter(|&i| i != 10) {
            assert_eq!(bank.filter(i), before.filter(i));
        }
        let empty = reactivate_random(&mut bank, &[], 0.0, 0.1, 1e-3, &mut rng::stream(1, 1)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn random_redraw_gives_up_when_threshold_unreachable() {
        let mut bank = FilterBank::<f64>::zeros(2, 1, 1);
        let err = reactivate_random(&mut bank, &[0], 0.0, 1e-9, 1.0, &mut rng::stream(0, 0)).unwrap_err();
        assert_eq!(
            err,
            LifecycleError::ResampleExhausted {
                target: 0,
                attempts: MAX_REDRAWS
            }
        );
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("annealed".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::default().validate().is_ok());
        let bad = PolicyConfig {
            theta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PolicyConfig {
            sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
