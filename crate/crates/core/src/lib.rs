//! Inactive-filter detection and reactivation for the first convolution
//! layer of a small CNN, plus the tooling to train, measure, cluster and
//! render filter banks.
//!
//! The pieces, bottom up:
//!
//! * [`tensor`]: dense tensors, conv/ReLU/pool/linear kernels and a small
//!   reverse-mode graph;
//! * [`lifecycle`]: L1 inactivity detection, ranking and the reactivation
//!   policies, packaged as an end-of-epoch hook;
//! * [`model`]: the toy network, SGD with momentum and the training loop;
//! * [`analysis`]: PCA + mean-shift counting of distinct filter patterns;
//! * [`viz`]: PGM filter grids;
//! * [`data`]: the synthetic dataset, RAWD files and grayscale cleaning;
//! * [`harness`]: config files, weight dumps, JSONL records and the commands
//!   behind the `rif` binary.

pub mod analysis;
pub mod data;
pub mod digest;
pub mod harness;
pub mod lifecycle;
pub mod model;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod viz;

pub use analysis::{count_unique_patterns, AnalysisConfig, UniqueCount};
pub use data::{Dataset, SynthConfig};
pub use lifecycle::{detect_inactive, rank_by_l1, FilterBank, LifecycleHook, LifecycleLog, PolicyConfig, PolicyKind};
pub use model::{run_training, EpochEnd, EpochHook, TrainConfig, TrainOutcome};
pub use report::RunRecord;
pub use tensor::{Precision, Real, Tensor};
