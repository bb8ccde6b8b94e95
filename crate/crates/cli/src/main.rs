use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rif_core::analysis::{AnalysisConfig, Kernel};
use rif_core::harness::{self, exit, set_key, HarnessError, WeightDump};
use rif_core::lifecycle::PolicyKind;
use rif_core::report::format_table;
use rif_core::viz::GridLayout;
use rif_core::TrainConfig;

#[derive(Parser)]
#[command(
    name = "rif",
    version,
    about = "Inactive-filter monitoring and reactivation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its weight dump, lifecycle log and report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (policy, seed) pair and aggregate the results.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// `a..b` (exclusive) or a comma-separated list.
        #[arg(long, default_value = "0..5", value_parser = parse_seeds)]
        seeds: Seeds,
        /// Comma-separated; defaults to all four policies.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        out: PathBuf,
        /// Run independent seeds concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Inactive counts, L1 ranking and unique-pattern counts of a weight dump.
    Analyze {
        dump: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        theta: f64,
        #[arg(long, value_enum, default_value_t = KernelArg::Flat)]
        kernel: KernelArg,
        #[arg(long, default_value_t = AnalysisConfig::default().quantile)]
        quantile: f64,
        #[arg(long, default_value_t = AnalysisConfig::default().variance_target)]
        variance_target: f64,
    },
    /// Render a weight dump as a PGM filter grid.
    Visualize {
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = GridLayout::default().columns)]
        columns: usize,
        #[arg(long, default_value_t = GridLayout::default().magnify)]
        magnify: usize,
    },
    /// Drop images whose R, G and B planes are identical.
    CleanData { input: PathBuf, output: PathBuf },
    /// Re-aggregate run records from one or more report files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in settings used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    FilterKiller,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Flat,
    Gaussian,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range end: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig, HarnessError> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => harness::load_config(path)?,
            (None, Preset::Default) => TrainConfig::default(),
            (None, Preset::FilterKiller) => TrainConfig::filter_killer(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            match set_key(&mut cfg, k.trim(), v.trim()) {
                Ok(true) => {}
                Ok(false) => return Err(HarnessError::Usage(format!("unknown config key `{}`", k.trim()))),
                Err(e) => return Err(HarnessError::Usage(e)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            policy,
            out,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = policy {
                cfg.policy.kind = p;
            }
            let run = harness::train(&cfg, &out)?;
            let r = &run.record;
            println!("policy            {}", r.policy);
            println!("seed              {}", r.seed);
            println!("final inactive    {} of {}", r.final_inactive, cfg.filters);
            println!("reactivations     {}", r.reactivations);
            println!(
                "unique patterns   {} (active only: {})",
                r.unique_patterns, r.unique_patterns_active
            );
            match r.eval_accuracy {
                Some(a) => println!("eval accuracy     {:.2}% (desk scale)", 100.0 * a),
                None => println!("eval accuracy     - (empty eval split)"),
            }
            println!("artifacts         {}", out.display());
        }
        Command::Experiment {
            config,
            seeds,
            policies,
            out,
            parallel,
        } => {
            let cfg = config.load()?;
            let policies = if policies.is_empty() {
                PolicyKind::ALL.to_vec()
            } else {
                policies
            };
            let outcome = harness::experiment(&cfg, &seeds.0, &policies, Some(&out), parallel)?;
            print!("{}", format_table(&outcome.aggregates));
            for f in &outcome.failures {
                eprintln!("failed: {} seed {}: {}", f.policy, f.seed, f.error);
            }
        }
        Command::Analyze {
            dump,
            theta,
            kernel,
            quantile,
            variance_target,
        } => {
            let d = WeightDump::read(&dump)?;
            let cfg = AnalysisConfig {
                variance_target,
                quantile,
                kernel: match kernel {
                    KernelArg::Flat => Kernel::Flat,
                    KernelArg::Gaussian => Kernel::Gaussian,
                },
            };
            let a = harness::analyze(&d, theta, &cfg)?;
            println!(
                "dump              {} filters, policy {}, epoch {}",
                d.bank.len(),
                d.policy,
                d.epoch
            );
            for (t, idx) in &a.inactive {
                println!("inactive @ {t:<7e}  {} {:?}", idx.len(), idx);
            }
            println!("ranking           {:?}", a.ranking);
            let l1: Vec<String> = a.ranking.iter().map(|&i| format!("{:.4e}", a.l1[i])).collect();
            println!("l1 (ranked)       {}", l1.join(" "));
            for u in [&a.all, &a.active] {
                println!(
                    "unique patterns   {} ({} filters{}, {} PCA dims, bandwidth {:.4e}{})",
                    u.n_clusters,
                    u.filters.len(),
                    if u.active_only { ", active only" } else { "" },
                    u.retained_dims,
                    u.bandwidth,
                    if u.degenerate { ", degenerate" } else { "" },
                );
            }
        }
        Command::Visualize {
            dump,
            out,
            columns,
            magnify,
        } => {
            if columns == 0 || magnify == 0 {
                return Err(HarnessError::Usage("columns and magnify must be >= 1".into()));
            }
            let d = WeightDump::read(&dump)?;
            let layout = GridLayout {
                columns,
                magnify,
                ..Default::default()
            };
            harness::visualize(&d, &out, &layout)?;
        }
        Command::CleanData { input, output } => {
            let dropped = harness::clean_data(&input, &output)?;
            println!("dropped {dropped} grayscale images");
        }
        Command::Report { files } => {
            let (runs, aggregates) = harness::report(&files)?;
            println!("{} runs", runs.len());
            print!("{}", format_table(&aggregates));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("7, 2,9").unwrap().0, vec![7, 2, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("1,x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
