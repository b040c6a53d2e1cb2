//! `splitmesh` — run split-learning experiments from the command line.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numeric
//! divergence, 1 on anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splitmesh_core::error::Error;
use splitmesh_core::experiment::{
    emit_report, run_diversity_sweep, run_experiment_with_transcript, ExperimentConfig, UseCase,
};
use splitmesh_core::nn::{
    bce_loss, finite_difference_gradcheck, init_params, relu_kink_margin, LayerSpec,
    NetworkSegment, SegmentRole,
};
use splitmesh_core::rng::{rng_uniform, RngState};
use splitmesh_core::tensor::Tensor;

#[derive(Parser)]
#[command(name = "splitmesh", version, about = "Deterministic split-learning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding the real datasets (creditcard.csv,
    /// transactions.csv, articles.csv, customers.csv); fills in any data
    /// path the config leaves unset.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and emit its report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump every cross-boundary message's metadata as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run the domain-diversity sweep: one run per domain count.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated domain counts, e.g. 1,2,3,5.
        #[arg(long, value_delimiter = ',', required = true)]
        domains: Vec<usize>,
        /// Directory for the per-count reports (report_d<N>.json).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Audit the analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random segments to audit.
        #[arg(long, default_value_t = 100)]
        segments: usize,
        /// Central-difference step size.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Inspect data-layer artifacts.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Print the column → domain assignment a config implies.
    Partition {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Argument(_) => ExitCode::from(2),
        Error::NonFinite(_) => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.data_dir {
        fill_data_paths(&mut cfg, dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fill_data_paths(cfg: &mut ExperimentConfig, dir: &Path) {
    let set = |slot: &mut Option<PathBuf>, name: &str| {
        if slot.is_none() {
            *slot = Some(dir.join(name));
        }
    };
    set(&mut cfg.data.fraud_csv, "creditcard.csv");
    set(&mut cfg.data.transactions_csv, "transactions.csv");
    set(&mut cfg.data.articles_csv, "articles.csv");
    set(&mut cfg.data.customers_csv, "customers.csv");
}

fn cmd_run(
    common: &CommonArgs,
    out: Option<&Path>,
    transcript: Option<&Path>,
) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let report = run_experiment_with_transcript(&cfg, transcript)?;
    eprintln!(
        "run finished in {:.2}s, {} rounds, param hash {}",
        report.wall_clock_secs,
        report.transcript_summary.rounds,
        &report.param_hash[..16]
    );
    match out {
        Some(path) => emit_report(&report, path)?,
        None => print!("{}", report.to_canonical_json()?),
    }
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, domains: &[usize], out_dir: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let reports = run_diversity_sweep(&cfg, domains)?;
    for report in &reports {
        let d = report.config.num_domains;
        eprintln!(
            "domains={d}: hash {} metrics {}",
            &report.param_hash[..16],
            report
                .metrics
                .names()
                .map(|n| format!("{n}={:.4}", report.metrics.get(n).unwrap_or(f64::NAN)))
                .collect::<Vec<_>>()
                .join(" ")
        );
        match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                emit_report(report, dir.join(format!("report_d{d}.json")))?;
            }
            None => print!("{}", report.to_canonical_json()?),
        }
    }
    Ok(())
}

fn cmd_gradcheck(
    common: &CommonArgs,
    segments: usize,
    step: f64,
    tolerance: f64,
) -> Result<(), Error> {
    let seed = common.seed.unwrap_or(42);
    let outer = RngState::new(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut attempt = 0u64;
    while checked < segments {
        attempt += 1;
        if attempt > 100 * segments as u64 {
            return Err(Error::Data(
                "could not find enough kink-free probe points".into(),
            ));
        }
        let mut rng = outer.derive(attempt);
        let in_dim = 1 + rng.next_below(6) as usize;
        let hidden = 1 + rng.next_below(8) as usize;
        let with_relu = rng.next_below(2) == 1;
        let mut layers = vec![LayerSpec::linear(in_dim, hidden)];
        layers.push(if with_relu {
            LayerSpec::ReLU
        } else {
            LayerSpec::Sigmoid
        });
        layers.push(LayerSpec::linear(hidden, 1));
        let mut seg = NetworkSegment::new(SegmentRole::Server, layers)
            .map_err(|e| Error::Data(e.to_string()))?;
        init_params(&mut seg, &mut rng)?;
        let batch = 1 + rng.next_below(6) as usize;
        let input = rng_uniform(&mut rng, &[batch, in_dim], -1.0, 1.0)?;
        let labels = Tensor::new(
            vec![batch, 1],
            (0..batch).map(|_| rng.next_below(2) as f64).collect(),
        )?;
        if relu_kink_margin(&seg, &input)? <= 10.0 * step {
            continue;
        }
        let err = finite_difference_gradcheck(&mut seg, &bce_loss, &input, &labels, step)?;
        worst = worst.max(err);
        checked += 1;
    }
    println!("gradcheck: {checked} segments, max relative error {worst:.3e}");
    if worst >= tolerance {
        return Err(Error::Data(format!(
            "gradient audit failed: {worst:.3e} exceeds {tolerance:.3e}"
        )));
    }
    Ok(())
}

fn cmd_partition(common: &CommonArgs) -> Result<(), Error> {
    let cfg = load_config(common)?;
    // Mirror the runner's partition resolution on the schema the config
    // implies (synthetic column names or the fraud schema).
    let columns: Vec<String> = match cfg.use_case {
        UseCase::Fraud => splitmesh_core::data::FRAUD_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .collect(),
        UseCase::Retail => {
            println!("domain 0: customer features (ids + attributes)");
            println!("domain 1: article features (ids + attributes)");
            return Ok(());
        }
        UseCase::Synthetic => (0..cfg.synthetic.features)
            .map(|c| format!("f{c}"))
            .collect(),
    };
    let partition = match &cfg.partition {
        Some(map) => splitmesh_core::data::DomainPartition::new(map.clone(), cfg.num_domains)?,
        None if cfg.use_case == UseCase::Fraud && cfg.num_domains == 3 => {
            splitmesh_core::data::DomainPartition::fraud_default()
        }
        None => splitmesh_core::data::DomainPartition::contiguous(&columns, cfg.num_domains)?,
    };
    for d in 0..partition.num_domains() {
        let cols: Vec<&str> = columns
            .iter()
            .filter(|c| partition.domain_of(c) == Some(d))
            .map(String::as_str)
            .collect();
        println!("domain {d} ({} columns): {}", cols.len(), cols.join(","));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            common,
            out,
            transcript,
        } => cmd_run(common, out.as_deref(), transcript.as_deref()),
        Command::Sweep {
            common,
            domains,
            out_dir,
        } => cmd_sweep(common, domains, out_dir.as_deref()),
        Command::Gradcheck {
            common,
            segments,
            step,
            tolerance,
        } => cmd_gradcheck(common, *segments, *step, *tolerance),
        Command::Data {
            command: DataCommand::Partition { common },
        } => cmd_partition(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
