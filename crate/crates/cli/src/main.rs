mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;
use tnn_maxwell::bench::{run_suite, Suite};
use tnn_maxwell::domains::DomainSpec;
use tnn_maxwell::fieldtnn::write_field_csv;
use tnn_maxwell::training::{forward, train, Checkpoint, EigenEntry, EigenReport};
use tnn_maxwell::Error;

use crate::config::RunConfig;

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "TNN_THREADS";

#[derive(Parser)]
#[command(name = "tnn-maxwell", version, about = "Maxwell cavity eigenvalues with tensor neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a configured domain and write eigs.csv, report.json and a checkpoint.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a benchmark suite and print one line per criterion.
    Bench {
        #[arg(long)]
        suite: String,
        /// Reduced step counts for the training suites.
        #[arg(long)]
        quick: bool,
        /// Also write the outcome as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sample one eigenfunction of a checkpoint on a uniform grid.
    ExportField {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 1-based rank among the non-spurious eigenpairs.
        #[arg(long)]
        index: usize,
        /// Grid points per axis.
        #[arg(long)]
        resolution: usize,
        /// Index the raw list, spurious pairs included.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value = "field.csv")]
        output: PathBuf,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn numeric_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

/// Invalid input maps to 2, everything the numerics raise to 3.
fn classify(error: Error) -> Failure {
    match error {
        Error::InvalidArgument(_)
        | Error::UnknownDomain(_)
        | Error::Decomposition(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::LengthMismatch { .. } => config_error(error),
        _ => numeric_error(error),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        eprintln!("error: {:#}", f.error);
        return ExitCode::from(f.code);
    }
    let result = match cli.command {
        Command::Solve { config, output } => solve(&config, output),
        Command::Bench { suite, quick, json } => bench(&suite, quick, json.as_deref()),
        Command::ExportField {
            checkpoint,
            index,
            resolution,
            raw,
            output,
        } => export_field(&checkpoint, index, resolution, raw, &output),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| config_error(anyhow::anyhow!("{THREADS_VAR} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(config_error)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a RunConfig,
    report: &'a EigenReport,
}

fn solve(path: &Path, output: Option<PathBuf>) -> Result<u8, Failure> {
    let mut config = RunConfig::load(path).map_err(config_error)?;
    if let Some(dir) = output {
        config.output_dir = dir;
    }
    let domain = config.domain().map_err(|e| match e.downcast::<Error>() {
        Ok(err) => classify(err),
        Err(other) => config_error(other),
    })?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(config_error)?;
    let mut train_config = config.train.clone();
    if train_config.checkpoint.is_none() {
        train_config.checkpoint = Some(dir.join("checkpoint.json"));
    }
    info!(
        "solving `{}` with {} groups, {} steps",
        domain.name,
        domain.groups.len(),
        train_config.steps
    );
    let outcome = train::<f64>(&domain, &train_config).map_err(classify)?;
    let report = &outcome.report;
    write_eigs_csv(&dir.join("eigs.csv"), report).map_err(numeric_error)?;
    let record = RunRecord {
        config: &config,
        report,
    };
    let file = File::create(dir.join("report.json")).map_err(numeric_error)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &record).map_err(numeric_error)?;
    for e in report.filtered.iter().take(train_config.tracked) {
        println!(
            "k={:<3} lambda={:.10} ref={} rel_err={} div={:.3e}",
            e.k,
            e.lambda,
            e.lambda_ref.map_or("-".into(), |r| format!("{r:.10}")),
            e.rel_err.map_or("-".into(), |r| format!("{r:.3e}")),
            e.div_seminorm
        );
    }
    println!("wrote {}", dir.display());
    Ok(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

/// One row per eigenpair, ascending; references attach to non-spurious rows.
fn write_eigs_csv(path: &Path, report: &EigenReport) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "k,lambda_nn,lambda_ref,rel_err,div_seminorm,curl_seminorm,rho,spurious")?;
    let mut filtered = report.filtered.iter();
    for e in &report.raw {
        let matched: Option<&EigenEntry> = if e.spurious { None } else { filtered.next() };
        let rho = if e.rho.is_finite() {
            format!("{:e}", e.rho)
        } else {
            "inf".into()
        };
        writeln!(
            out,
            "{},{:e},{},{},{:e},{:e},{},{}",
            e.k,
            e.lambda,
            fmt_opt(matched.and_then(|m| m.lambda_ref)),
            fmt_opt(matched.and_then(|m| m.rel_err)),
            e.div_seminorm,
            e.curl_seminorm,
            rho,
            e.spurious
        )?;
    }
    out.flush()?;
    Ok(())
}

fn bench(name: &str, quick: bool, json: Option<&Path>) -> Result<u8, Failure> {
    let suite: Suite = name.parse().map_err(config_error)?;
    let outcomes = run_suite(suite, quick);
    let mut all_passed = true;
    for o in &outcomes {
        println!("suite {} ({:.1} s)", o.suite, o.seconds);
        for c in &o.criteria {
            println!("  {c}");
        }
        for (run, report) in &o.reports {
            println!("  run {run}: {} steps, {:.1} s", report.steps, report.seconds);
            println!("    {:>3} {:>16} {:>16} {:>10} {:>10}", "k", "lambda_nn", "lambda_ref", "rel_err", "div");
            for e in report.filtered.iter().take(10) {
                println!(
                    "    {:>3} {:>16.10} {:>16} {:>10} {:>10.2e}",
                    e.k,
                    e.lambda,
                    e.lambda_ref.map_or("-".into(), |r| format!("{r:.10}")),
                    e.rel_err.map_or("-".into(), |r| format!("{r:.2e}")),
                    e.div_seminorm
                );
            }
        }
        all_passed &= o.passed();
    }
    if let Some(path) = json {
        let file = File::create(path).map_err(numeric_error)?;
        serde_json::to_writer_pretty(BufWriter::new(file), &outcomes).map_err(numeric_error)?;
    }
    Ok(if all_passed { 0 } else { 1 })
}

/// Cell-centred grid over the bounding box, restricted to the domain.
fn sample_points(domain: &DomainSpec, resolution: usize) -> Vec<Vec<f64>> {
    let bbox = domain.bounding_box();
    let d = bbox.len();
    let total = resolution.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                let i = flat % resolution;
                flat /= resolution;
                let (a, b) = bbox[j];
                x[j] = a + (b - a) * (i as f64 + 0.5) / resolution as f64;
            }
            x
        })
        .filter(|x| domain.contains(x))
        .collect()
}

fn export_field(
    path: &Path,
    index: usize,
    resolution: usize,
    raw: bool,
    output: &Path,
) -> Result<u8, Failure> {
    if resolution == 0 {
        return Err(config_error(anyhow::anyhow!("resolution must be positive")));
    }
    let checkpoint = Checkpoint::<f64>::load(path).map_err(classify)?;
    let model = checkpoint.model().map_err(classify)?;
    let state = forward(&model, &checkpoint.config).map_err(classify)?;
    let threshold = checkpoint.config.spurious_threshold;
    let candidates: Vec<usize> = (0..state.eig.len())
        .filter(|&k| raw || (state.rho[k].is_finite() && state.rho[k] <= threshold))
        .collect();
    let Some(&k) = index.checked_sub(1).and_then(|i| candidates.get(i)) else {
        return Err(config_error(Error::OutOfRange {
            index,
            len: candidates.len(),
        }));
    };
    let points = sample_points(&checkpoint.domain, resolution);
    let values = model
        .eval_points(&state.eval, &state.eig.vectors[k], &points)
        .map_err(classify)?;
    let file = File::create(output)
        .with_context(|| format!("creating {}", output.display()))
        .map_err(config_error)?;
    write_field_csv(BufWriter::new(file), &points, &values).map_err(numeric_error)?;
    println!(
        "wrote {} samples of eigenpair {index} (lambda {:.10}) to {}",
        points.len(),
        state.eig.values[k],
        output.display()
    );
    Ok(0)
}
