//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most
//! once. Required keys: `epochs`, `batch_size`, `filters`, `lr`, `momentum`,
//! `weight_decay`; everything else falls back to [`TrainConfig::default`].
//!
//! | key | meaning |
//! |-----|---------|
//! | `epochs` | training epochs |
//! | `batch_size` | minibatch size |
//! | `filters` | first-layer filter count |
//! | `lr` | initial learning rate |
//! | `momentum` | SGD momentum |
//! | `weight_decay` | L2 coefficient folded into the velocity |
//! | `seed` | run seed |
//! | `lr_decay` | multiplier at each milestone |
//! | `lr_milestones` | comma-separated fractions of `epochs` (may be empty) |
//! | `init_std` | std of the Gaussian initialization |
//! | `policy` | `baseline`, `directed_random`, `directed_redundant`, `directed_complementary` |
//! | `theta` | inactivity threshold on the filter L1 norm |
//! | `mu`, `sigma` | redraw distribution for `directed_random` |
//! | `check_every` | check cadence in epochs |
//! | `policy_stream` | RNG stream id of the hook |
//! | `precision` | `f32` or `f64` |
//! | `data` | `synthetic` or a path to a RAWD file |
//! | `data_seed`, `data_classes`, `data_per_class`, `data_size`, `data_noise`, `data_jitter`, `data_eval_fraction` | synthetic generator |
//! | `clean_grayscale` | drop R=G=B images before training |
//! | `variance_target` | PCA explained-variance target |
//! | `bandwidth_quantile` | pairwise-distance quantile for the mean-shift bandwidth |
//! | `kernel` | `flat` or `gaussian` |

use std::collections::HashSet;
use std::fmt::Write;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::Kernel;
use crate::data::SynthConfig;
use crate::digest::fnv1a64;
use crate::lifecycle::PolicyKind;
use crate::model::{DataSource, TrainConfig};

pub const REQUIRED_KEYS: [&str; 6] = ["epochs", "batch_size", "filters", "lr", "momentum", "weight_decay"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{key}`: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true/false, got {other:?}")),
    }
}

fn synth_mut(cfg: &mut TrainConfig) -> &mut SynthConfig {
    if !matches!(cfg.data.source, DataSource::Synthetic(_)) {
        cfg.data.source = DataSource::Synthetic(SynthConfig::default());
    }
    match &mut cfg.data.source {
        DataSource::Synthetic(s) => s,
        DataSource::Raw(_) => unreachable!(),
    }
}

/// Applies one `key = value` assignment. Returns `Ok(false)` for unknown keys.
pub fn set_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool, String> {
    match key {
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "filters" => cfg.filters = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "momentum" => cfg.momentum = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "lr_decay" => cfg.lr_decay = parse(key, value)?,
        "lr_milestones" => {
            cfg.lr_milestones = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse::<f64>(key, s))
                .collect::<Result<_, _>>()?
        }
        "init_std" => cfg.init_std = parse(key, value)?,
        "policy" => cfg.policy.kind = value.parse::<PolicyKind>().map_err(|e| e.to_string())?,
        "theta" => cfg.policy.theta = parse(key, value)?,
        "mu" => cfg.policy.mu = parse(key, value)?,
        "sigma" => cfg.policy.sigma = parse(key, value)?,
        "check_every" => cfg.policy.check_every = parse(key, value)?,
        "policy_stream" => cfg.policy.stream = parse(key, value)?,
        "precision" => cfg.precision = value.parse()?,
        "data" => {
            cfg.data.source = if value == "synthetic" {
                match &cfg.data.source {
                    DataSource::Synthetic(_) => cfg.data.source.clone(),
                    DataSource::Raw(_) => DataSource::Synthetic(SynthConfig::default()),
                }
            } else {
                DataSource::Raw(PathBuf::from(value))
            }
        }
        "data_seed" => synth_mut(cfg).seed = parse(key, value)?,
        "data_classes" => synth_mut(cfg).classes = parse(key, value)?,
        "data_per_class" => synth_mut(cfg).per_class = parse(key, value)?,
        "data_size" => synth_mut(cfg).size = parse(key, value)?,
        "data_noise" => synth_mut(cfg).noise = parse(key, value)?,
        "data_jitter" => synth_mut(cfg).jitter = parse_bool(value)?,
        "data_eval_fraction" => synth_mut(cfg).eval_fraction = parse(key, value)?,
        "clean_grayscale" => cfg.data.clean_grayscale = parse_bool(value)?,
        "variance_target" => cfg.analysis.variance_target = parse(key, value)?,
        "bandwidth_quantile" => cfg.analysis.quantile = parse(key, value)?,
        "kernel" => {
            cfg.analysis.kernel = match value {
                "flat" => Kernel::Flat,
                "gaussian" => Kernel::Gaussian,
                other => return Err(format!("expected flat or gaussian, got {other:?}")),
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses a config file body. Data keys referring to the synthetic generator
/// are applied after `data`, so their order in the file does not matter.
pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        entries.push((line, key.to_string(), value.to_string()));
    }
    // `data` first so that `data_*` keys land on the right source.
    entries.sort_by_key(|(_, k, _)| k != "data");
    for (line, key, value) in entries {
        match set_key(&mut cfg, &key, &value) {
            Ok(true) => {}
            Ok(false) => return Err(ConfigError::UnknownKey { line, key }),
            Err(reason) => {
                return Err(ConfigError::BadValue {
                    line,
                    key,
                    value,
                    reason,
                })
            }
        }
    }
    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !seen.contains(**k)) {
        return Err(ConfigError::MissingKey(missing.to_string()));
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

impl TrainConfig {
    /// Canonical `key = value` listing of every setting, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("filters", self.filters.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("seed", self.seed.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv(
            "lr_milestones",
            self.lr_milestones
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("init_std", self.init_std.to_string());
        kv("policy", self.policy.kind.to_string());
        kv("theta", self.policy.theta.to_string());
        kv("mu", self.policy.mu.to_string());
        kv("sigma", self.policy.sigma.to_string());
        kv("check_every", self.policy.check_every.to_string());
        kv("policy_stream", self.policy.stream.to_string());
        kv("precision", self.precision.to_string());
        match &self.data.source {
            DataSource::Synthetic(sc) => {
                kv("data", "synthetic".into());
                kv("data_seed", sc.seed.to_string());
                kv("data_classes", sc.classes.to_string());
                kv("data_per_class", sc.per_class.to_string());
                kv("data_size", sc.size.to_string());
                kv("data_noise", sc.noise.to_string());
                kv("data_jitter", sc.jitter.to_string());
                kv("data_eval_fraction", sc.eval_fraction.to_string());
            }
            DataSource::Raw(p) => kv("data", p.display().to_string()),
        }
        kv("clean_grayscale", self.data.clean_grayscale.to_string());
        kv("variance_target", self.analysis.variance_target.to_string());
        kv("bandwidth_quantile", self.analysis.quantile.to_string());
        kv(
            "kernel",
            match self.analysis.kernel {
                Kernel::Flat => "flat",
                Kernel::Gaussian => "gaussian",
            }
            .into(),
        );
        s
    }

    /// FNV-1a 64 of [`TrainConfig::to_kv`].
    pub fn digest(&self) -> u64 {
        fnv1a64(self.to_kv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "epochs = 3\nbatch_size = 8\nfilters = 4\nlr = 0.1\nmomentum = 0.9\nweight_decay = 5e-4\n";

    #[test]
    fn minimal_file_uses_defaults_for_the_rest() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.filters, 4);
        assert_eq!(cfg.policy, TrainConfig::default().policy);
    }

    #[test]
    fn canonical_form_round_trips() {
        let mut cfg = TrainConfig::filter_killer();
        cfg.policy.kind = PolicyKind::DirectedComplementary;
        cfg.lr_milestones = vec![];
        cfg.seed = 42;
        let back = parse_config(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_ne!(TrainConfig::default().digest(), cfg.digest());

        let mut raw = cfg.clone();
        raw.data.source = DataSource::Raw("some/data.rawd".into());
        assert_eq!(parse_config(&raw.to_kv()).unwrap(), raw);
    }

    #[test]
    fn diagnostics_name_the_line_and_key() {
        let err = parse_config(&MINIMAL.replace("filters = 4\n", "")).unwrap_err();
        assert_eq!(err, ConfigError::MissingKey("filters".into()));
        let err = parse_config(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 7,
                key: "bogus".into()
            }
        );
        let err = parse_config(&format!("{MINIMAL}lr = 0.2\n")).unwrap_err();
        assert_eq!(
            err,
            ConfigError::DuplicateKey {
                line: 7,
                key: "lr".into()
            }
        );
        let err = parse_config(&format!("# header\n{MINIMAL}just words\n")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 8, .. }));
        let err = parse_config(&MINIMAL.replace("lr = 0.1", "lr = fast")).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 4, ref key, .. } if key == "lr"));
        let err = parse_config(&format!("{MINIMAL}policy = annealed\n")).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 7, .. }));
        let err = parse_config(&MINIMAL.replace("epochs = 3", "epochs = 0")).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }
}
