//! `ecf`: generate datasets, train and evaluate surrogates, verify and report.
//!
//! Exit codes: 0 success, 1 failure, 2 bad usage or invalid configuration.
//! Failures print a single `ecf: error[<kind>]: <message>` line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecf_core::config::parse_override;
use ecf_core::dataset::Split;
use ecf_core::metrics::{sci, ReportFormat, Variant};
use ecf_core::pipeline::{
    run_eval, run_gen, run_report, run_train, EvalRequest, GenRequest, Scale, TrainRequest,
};
use ecf_core::training::{CorrectionMode, TrainMode};
use ecf_core::verify::{run_suite, Fault, Suite};
use ecf_core::{EcfError, Precision, ProblemKind};

/// Environment variable capping the worker-thread count.
const THREADS_ENV: &str = "ECF_THREADS";

#[derive(Parser)]
#[command(name = "ecf", version, about = "Zero-mode conservation correction for neural PDE surrogates")]
struct Cli {
    /// Worker threads (overrides ECF_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScaleFlags {
    /// Desk-scale preset (the default).
    #[arg(long, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// Benchmark grid sizes, sample counts and 1000 epochs. Slow.
    #[arg(long)]
    paper_scale: bool,
}

impl ScaleFlags {
    fn scale(&self) -> Scale {
        if self.paper_scale {
            eprintln!("warning: paper-scale preset selected; expect long runtimes");
            Scale::Paper
        } else {
            Scale::Desk
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate and audit the train/valid/test splits of one problem.
    Gen {
        /// ac_dw, ac_fh, heat, water, diff or cd.
        #[arg(long)]
        problem: Option<ProblemKind>,
        /// TOML file overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scale: ScaleFlags,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Points per axis.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        valid: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Storage precision: f64 or f32.
        #[arg(long)]
        precision: Option<Precision>,
        /// Extra `key.path=value` override, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed on a generated dataset.
    Train {
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// baseline, ecf_i or ecf_s.
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scale: ScaleFlags,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        /// mae or mse.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out checkpoints on a split and write metrics records.
    Eval {
        /// Checkpoint file, `seed<N>` directory or training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// off, feedback or posthoc (default: the training mode's pairing).
        #[arg(long)]
        correction: Option<CorrectionMode>,
        /// Label override: base, ecf_i or ecf_s.
        #[arg(long)]
        variant: Option<Variant>,
        /// train, valid or test.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fixed-seed property suites.
    Verify {
        /// theorems, solvers, gradients or all.
        #[arg(default_value = "all")]
        suite: Suite,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Aggregate metrics records into tables and plot data.
    Report {
        /// Directories holding metrics records.
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// csv, markdown, plotdata or all.
        #[arg(long, default_value = "all")]
        format: ReportFormat,
    },
}

enum Failure {
    Core(EcfError),
    Verify(String),
}

impl From<EcfError> for Failure {
    fn from(e: EcfError) -> Self {
        Failure::Core(e)
    }
}

fn overrides(pairs: &[(&str, Option<String>)], extra: &[String]) -> Result<Vec<ecf_core::config::TomlTable>, EcfError> {
    let mut out = Vec::new();
    for (key, value) in pairs {
        if let Some(v) = value {
            out.push(parse_override(&format!("{key}={v}"))?);
        }
    }
    for s in extra {
        out.push(parse_override(s)?);
    }
    Ok(out)
}

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

fn run(cli: Cli, argv: &[String]) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            problem,
            config,
            scale,
            seed,
            resolution,
            train,
            valid,
            test,
            precision,
            set,
            out,
        } => {
            let req = GenRequest {
                problem,
                config_file: config,
                scale: scale.scale(),
                overrides: overrides(
                    &[
                        ("master_seed", seed.map(|v| v.to_string())),
                        ("resolution", resolution.map(|v| v.to_string())),
                        ("counts.train", train.map(|v| v.to_string())),
                        ("counts.valid", valid.map(|v| v.to_string())),
                        ("counts.test", test.map(|v| v.to_string())),
                    ],
                    &set,
                )?,
                precision,
                out_dir: out,
            };
            let outcome = run_gen(&req, argv)?;
            let d = &outcome.record.dataset;
            println!(
                "generated {} ({} scale, {}x{}, {:?}) into {}",
                d.problem,
                outcome.record.scale,
                d.resolution,
                d.resolution,
                outcome.record.precision,
                req.out_dir.display()
            );
            for (split, a) in &outcome.audits {
                println!(
                    "  {split}: {} samples, max drift {}, max flux residual {}",
                    d.counts.get(*split),
                    sci(a.max_drift),
                    sci(a.max_flux_residual)
                );
            }
        }
        Command::Train {
            data,
            mode,
            config,
            scale,
            epochs,
            seed,
            lr,
            loss,
            batch_size,
            set,
            out,
        } => {
            let req = TrainRequest {
                data_dir: data,
                scale: scale.scale(),
                config_file: config,
                overrides: overrides(
                    &[
                        ("train.mode", mode.map(|m| quoted(m.name()))),
                        ("train.epochs", epochs.map(|v| v.to_string())),
                        ("train.seeds", seed.map(|v| format!("[{v}]"))),
                        ("train.lr", lr.map(|v| format!("{v:?}"))),
                        ("train.loss", loss.map(|v| quoted(&v))),
                        ("train.batch_size", batch_size.map(|v| v.to_string())),
                    ],
                    &set,
                )?,
                out_dir: out,
            };
            let outcome = run_train(&req, argv)?;
            for r in &outcome.runs {
                println!(
                    "trained {} {} seed {}: final loss {}, best epoch {}",
                    r.dataset,
                    r.mode,
                    r.seed,
                    sci(r.final_loss),
                    r.best_epoch
                );
            }
        }
        Command::Eval {
            checkpoint,
            data,
            correction,
            variant,
            split,
            out,
        } => {
            let req = EvalRequest {
                checkpoint,
                data_dir: data,
                correction,
                variant,
                split,
                out_dir: out,
            };
            let outcome = run_eval(&req, argv)?;
            for e in &outcome.evaluations {
                let r = &e.record;
                let seconds: f64 = e.rollouts.iter().map(|x| x.seconds).sum();
                println!(
                    "{} {} seed {}: mean RMSE {}, final RMSE {}, mean conservation error {}, max {} ({} rollouts, {seconds:.2}s)",
                    r.dataset,
                    r.variant.label(),
                    r.seed,
                    sci(r.mean_rmse),
                    sci(r.final_rmse),
                    sci(r.mean_conservation_error),
                    sci(r.max_conservation_error),
                    r.test_samples
                );
            }
        }
        Command::Verify { suite, inject_fault } => {
            let outcomes = run_suite(suite, inject_fault);
            let mut failed = Vec::new();
            for o in &outcomes {
                println!("{o}");
                if !o.passed {
                    failed.push(format!("{}/{}: {}", o.suite, o.name, o.detail));
                }
            }
            let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
            println!("{} of {} properties passed in {total:.2}s", outcomes.len() - failed.len(), outcomes.len());
            if !failed.is_empty() {
                return Err(Failure::Verify(format!("{} failed; first: {}", failed.len(), failed[0])));
            }
        }
        Command::Report { records, out, format } => {
            let outcome = run_report(&records, &out, format, argv)?;
            println!("{} records -> {} files in {}", outcome.records.len(), outcome.files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        // Ignoring the error is fine: it only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("ecf: error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(if matches!(e, EcfError::Config(_)) { 2 } else { 1 })
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("ecf: error[verify_failed]: {}", one_line(&msg));
            ExitCode::from(1)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
