//! Inactive-filter detection and reactivation for the first convolution layer.
//!
//! A filter is inactive when the L1 norm of its weights is at most `theta`.
//! At the end of each checked epoch [`LifecycleHook`] records every filter's
//! norm, the inactive set and the L1 ranking, then (unless the policy is
//! baseline, or this is the last epoch) overwrites the inactive filters:
//!
//! * `directed_random`: fresh draws from the initialization distribution;
//! * `directed_redundant`: copies of the top-k active filters by L1;
//! * `directed_complementary`: negated copies of the top-k active filters.

mod bank;
mod log;
mod policy;

use thiserror::Error;

use crate::model::{EpochEnd, EpochHook};
use crate::tensor::Real;

pub use bank::{detect_inactive, rank_by_l1, FilterBank};
pub use log::{EpochRecord, LifecycleLog, ReactivationEvent, StuckViolation};
pub use policy::{
    reactivate_complementary, reactivate_random, reactivate_redundant, select_sources, PolicyConfig, PolicyKind,
    Reactivation, MAX_REDRAWS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifecycleError {
    #[error("filter index {index} out of range for bank of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{inactive} inactive filters and {active} active sources")]
    NotEnoughActive { inactive: usize, active: usize },
    #[error("filter {target} still inactive after {attempts} redraws")]
    ResampleExhausted { target: usize, attempts: usize },
    #[error("ranking is not a permutation of 0..{len}")]
    InvalidRanking { len: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("bad filter bank shape: {0}")]
    Shape(String),
}

/// Epoch-end callback that monitors the bank and applies a reactivation policy.
#[derive(Debug, Clone)]
pub struct LifecycleHook {
    policy: PolicyConfig,
}

impl LifecycleHook {
    pub fn new(policy: PolicyConfig) -> Result<Self, LifecycleError> {
        policy.validate()?;
        Ok(LifecycleHook { policy })
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }
}

impl<T: Real> EpochHook<T> for LifecycleHook {
    fn on_epoch_end(&mut self, ctx: EpochEnd<'_, T>) -> Result<(), LifecycleError> {
        let last = ctx.epoch >= ctx.total_epochs;
        if !ctx.epoch.is_multiple_of(self.policy.check_every) && !last {
            return Ok(());
        }
        let l1 = ctx.bank.l1_norms();
        let inactive = detect_inactive(ctx.bank, self.policy.theta);
        let ranking = bank::ranking_from_norms(&l1);
        ctx.log.record_epoch(EpochRecord {
            epoch: ctx.epoch,
            l1,
            inactive: inactive.clone(),
            ranking: ranking.clone(),
        });
        if inactive.is_empty() || last {
            return Ok(());
        }
        let p = &self.policy;
        let events = match p.kind {
            PolicyKind::Baseline => return Ok(()),
            PolicyKind::DirectedRandom => reactivate_random(ctx.bank, &inactive, p.mu, p.sigma, p.theta, ctx.rng)?,
            PolicyKind::DirectedRedundant => reactivate_redundant(ctx.bank, &inactive, &ranking, ctx.rng)?,
            PolicyKind::DirectedComplementary => reactivate_complementary(ctx.bank, &inactive, &ranking, ctx.rng)?,
        };
        ctx.log.record_reactivations(ctx.epoch, p.kind, events);
        Ok(())
    }
}
