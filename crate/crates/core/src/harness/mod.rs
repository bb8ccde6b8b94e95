//! Experiment orchestration behind the `rif` command line: single runs,
//! seed x policy grids, dump analysis and rendering.

mod config;
mod dump;
mod records;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{count_unique_patterns, AnalysisConfig, AnalysisError, UniqueCount};
use crate::data::{self, DataError, Dataset};
use crate::lifecycle::{detect_inactive, rank_by_l1, FilterBank, LifecycleHook, LifecycleLog, PolicyKind};
use crate::model::{run_training, DataSource, ModelError, TrainConfig};
use crate::report::{aggregate, PolicyAggregate, RunRecord};
use crate::tensor::{Precision, TensorError};
use crate::viz::{render_bank, write_image, GridLayout};

pub use config::{parse_config, set_key, ConfigError, REQUIRED_KEYS};
pub use dump::{DumpError, WeightDump, RIF1_MAGIC};
pub use records::{decode_records, encode_records, read_records, write_records, ClusterReport, Record, RunFailure};

pub const WEIGHTS_FILE: &str = "weights.rif";
pub const LIFECYCLE_FILE: &str = "lifecycle.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("bad record file: {0}")]
    Record(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) => exit::USAGE,
            HarnessError::Model(ModelError::Config(_)) => exit::USAGE,
            HarnessError::Model(ModelError::Tensor(TensorError::Dimension { .. } | TensorError::Config { .. })) => {
                exit::DATA
            }
            HarnessError::Model(_) | HarnessError::Analysis(_) => exit::NUMERICAL,
            HarnessError::Data(_) | HarnessError::Dump(_) | HarnessError::Record(_) | HarnessError::Io { .. } => {
                exit::DATA
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(parse_config(&text)?)
}

/// Builds (or loads) the dataset a config describes, cleaning it if asked.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset, HarnessError> {
    let ds = match &cfg.data.source {
        DataSource::Synthetic(s) => data::synth_oriented_patches(s)?,
        DataSource::Raw(p) => data::load_raw(p)?,
    };
    Ok(if cfg.data.clean_grayscale {
        let (cleaned, dropped) = data::clean_grayscale(&ds);
        if dropped > 0 {
            log::info!("dropped {dropped} grayscale images");
        }
        cleaned
    } else {
        ds
    })
}

/// Result of one training run, with the bank in dump precision.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bank: FilterBank<f32>,
    pub log: LifecycleLog,
    pub record: RunRecord,
    pub clusters: Vec<ClusterReport>,
}

impl RunOutput {
    pub fn dump(&self) -> WeightDump {
        WeightDump {
            bank: self.bank.clone(),
            config_digest: self.record.config_digest,
            epoch: self.record.epochs.len() as u32,
            policy: self.record.policy.to_string(),
        }
    }

    pub fn report_records(&self) -> Vec<Record> {
        std::iter::once(Record::Run(Box::new(self.record.clone())))
            .chain(self.clusters.iter().cloned().map(Record::Cluster))
            .collect()
    }

    /// Writes the weight dump, lifecycle log and report into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        self.dump().write(&dir.join(WEIGHTS_FILE))?;
        write_records(&dir.join(LIFECYCLE_FILE), &self.log.to_records())?;
        write_records(&dir.join(REPORT_FILE), &self.report_records())
    }
}

/// One run with the lifecycle hook for `cfg.policy`.
pub fn run_once(cfg: &TrainConfig, dataset: &Dataset) -> Result<RunOutput, HarnessError> {
    let mut hook = LifecycleHook::new(cfg.policy.clone()).map_err(ModelError::from)?;
    let (bank, log, record) = match cfg.precision {
        Precision::F32 => {
            let out = run_training::<f32>(cfg, dataset, &mut hook)?;
            (out.net.conv1, out.log, out.record)
        }
        Precision::F64 => {
            let out = run_training::<f64>(cfg, dataset, &mut hook)?;
            (out.net.conv1.cast(), out.log, out.record)
        }
    };
    let clusters = [false, true]
        .iter()
        .map(|&active| count_unique_patterns(&bank, cfg.policy.theta, &cfg.analysis, active).map(|u| (&u).into()))
        .collect::<Result<_, _>>()?;
    Ok(RunOutput {
        bank,
        log,
        record,
        clusters,
    })
}

/// `rif train`: one deterministic run, artifacts written to `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<RunOutput, HarnessError> {
    let dataset = load_dataset(cfg)?;
    let run = run_once(cfg, &dataset)?;
    run.write_artifacts(out)?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub aggregates: Vec<PolicyAggregate>,
}

impl ExperimentOutcome {
    pub fn records(&self) -> Vec<Record> {
        self.runs
            .iter()
            .cloned()
            .map(|r| Record::Run(Box::new(r)))
            .chain(self.failures.iter().cloned().map(Record::Failure))
            .chain(self.aggregates.iter().cloned().map(Record::Aggregate))
            .collect()
    }
}

pub fn run_dir(out: &Path, policy: PolicyKind, seed: u64) -> PathBuf {
    out.join(format!("{policy}_seed{seed}"))
}

/// `rif experiment`: every `(policy, seed)` pair, one run each.
///
/// Runs are independent; with `parallel` they execute on the rayon pool.
/// Per-run artifacts go to `out/<policy>_seed<seed>/` and the combined report
/// to `out/report.jsonl`. Failed runs are logged and left out of the
/// aggregates.
pub fn experiment(
    base: &TrainConfig,
    seeds: &[u64],
    policies: &[PolicyKind],
    out: Option<&Path>,
    parallel: bool,
) -> Result<ExperimentOutcome, HarnessError> {
    if seeds.is_empty() || policies.is_empty() {
        return Err(HarnessError::Usage("need at least one seed and one policy".into()));
    }
    let dataset = load_dataset(base)?;
    let grid: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let job = |&(policy, seed): &(PolicyKind, u64)| -> Result<RunRecord, HarnessError> {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.policy.kind = policy;
        let run = run_once(&cfg, &dataset)?;
        if let Some(out) = out {
            run.write_artifacts(&run_dir(out, policy, seed))?;
        }
        Ok(run.record)
    };
    let results: Vec<_> = if parallel {
        grid.par_iter().map(job).collect()
    } else {
        grid.iter().map(job).collect()
    };

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&(policy, seed), res) in grid.iter().zip(results) {
        match res {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("run {policy} seed {seed} failed and is excluded: {e}");
                failures.push(RunFailure {
                    policy,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let outcome = ExperimentOutcome {
        aggregates: aggregate(&runs),
        runs,
        failures,
    };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
        write_records(&out.join(REPORT_FILE), &outcome.records())?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct DumpAnalysis {
    /// `(theta, inactive indices)` for each threshold examined.
    pub inactive: Vec<(f64, Vec<usize>)>,
    pub l1: Vec<f64>,
    pub ranking: Vec<usize>,
    pub all: UniqueCount,
    pub active: UniqueCount,
}

/// Thresholds always reported by `rif analyze`, besides the requested one.
pub const STANDARD_THETAS: [f64; 2] = [1e-3, 1e-6];

/// `rif analyze`: inactive counts, L1 ranking and unique-pattern counts.
pub fn analyze(dump: &WeightDump, theta: f64, cfg: &AnalysisConfig) -> Result<DumpAnalysis, HarnessError> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(HarnessError::Usage(format!("theta must be > 0, got {theta}")));
    }
    let bank = &dump.bank;
    let mut thetas = STANDARD_THETAS.to_vec();
    if !thetas.contains(&theta) {
        thetas.push(theta);
    }
    Ok(DumpAnalysis {
        inactive: thetas.iter().map(|&t| (t, detect_inactive(bank, t))).collect(),
        l1: bank.l1_norms(),
        ranking: rank_by_l1(bank),
        all: count_unique_patterns(bank, theta, cfg, false)?,
        active: count_unique_patterns(bank, theta, cfg, true)?,
    })
}

/// `rif visualize`.
pub fn visualize(dump: &WeightDump, out: &Path, layout: &GridLayout) -> Result<(), HarnessError> {
    let img = render_bank(&dump.bank, layout);
    write_image(&img, out).map_err(|e| HarnessError::io(out, e))
}

/// `rif clean-data`: returns the number of dropped images.
pub fn clean_data(input: &Path, output: &Path) -> Result<usize, HarnessError> {
    let ds = data::load_raw(input)?;
    let (cleaned, dropped) = data::clean_grayscale(&ds);
    data::write_raw(&cleaned, output)?;
    Ok(dropped)
}

/// `rif report`: re-aggregates the run records of one or more report files.
pub fn report(paths: &[PathBuf]) -> Result<(Vec<RunRecord>, Vec<PolicyAggregate>), HarnessError> {
    let mut runs = Vec::new();
    for p in paths {
        for r in read_records(p)? {
            if let Record::Run(run) = r {
                runs.push(*run);
            }
        }
    }
    if runs.is_empty() {
        return Err(HarnessError::Record("no run records found".into()));
    }
    let agg = aggregate(&runs);
    Ok((runs, agg))
}
