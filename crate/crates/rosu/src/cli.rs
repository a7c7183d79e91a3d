//! Command-line entry points: audit report generation, single experiment
//! runs, ablation suites, coupling diagnosis, and parameter sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::audit::{emit_report, run_audit_registry};
use crate::error::{Error, Result};
use crate::experiment::{
    coupling_diagnosis, run, run_ablation_suite, write_metrics_csv, write_metrics_jsonl,
    ExperimentConfig, RunRecord, Task,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rosu",
    about = "Retain-orthogonal surrogate unlearning: audits and toy experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full theory-audit registry and write a JSONL report.
    Audit {
        /// Base seed for all audited instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the report.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a single experiment from a JSON config file.
    Run {
        /// Path to a JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics and summary.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics output format.
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Run the four-variant ablation suite for a base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Trace the per-step forget/retain gradient coupling on a blobs task.
    Couple {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Run a grid of experiments varying rho, coupling, and batch sizes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write_rows(record: &RunRecord, path: &Path, format: OutputFormat) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        OutputFormat::Csv => write_metrics_csv(&record.rows, &mut buf)?,
        OutputFormat::Jsonl => write_metrics_jsonl(&record.rows, &mut buf)?,
    }
    fs::write(path, buf)?;
    Ok(())
}

fn write_summary(record: &RunRecord, path: &Path) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(&record.final_summary)?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

fn run_audit_command(seed: u64, out: &Path) -> Result<bool> {
    fs::create_dir_all(out)?;
    let records = run_audit_registry(seed)?;
    let mut buf = Vec::new();
    emit_report(&records, &mut buf)?;
    let path = out.join("audit_report.jsonl");
    fs::write(&path, buf)?;
    let failed = records.iter().filter(|r| !r.passed).count();
    println!(
        "audit: {} records, {} failed, report at {}",
        records.len(),
        failed,
        path.display()
    );
    Ok(failed == 0)
}

fn run_single(config: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(out)?;
    let record = run(config)?;
    let metrics = out.join(format!("metrics.{}", format.extension()));
    write_rows(&record, &metrics, format)?;
    write_summary(&record, &out.join("summary.json"))?;
    println!("run: {} rows written to {}", record.rows.len(), metrics.display());
    Ok(())
}

const ABLATION_VARIANT_NAMES: [&str; 4] = ["full", "zero_order", "beta_delta_only", "eta_v_only"];

fn run_ablate(config: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(out)?;
    let records = run_ablation_suite(config)?;
    for (record, name) in records.iter().zip(ABLATION_VARIANT_NAMES) {
        let metrics = out.join(format!("ablate_{name}.{}", format.extension()));
        write_rows(record, &metrics, format)?;
        write_summary(record, &out.join(format!("ablate_{name}_summary.json")))?;
    }
    println!("ablate: {} variants written to {}", records.len(), out.display());
    Ok(())
}

fn run_couple(config: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(out)?;
    let trace = coupling_diagnosis(config)?;
    let path = out.join(format!("coupling.{}", format.extension()));
    let mut buf = Vec::new();
    match format {
        OutputFormat::Csv => {
            writeln!(buf, "step,cos_coupling")?;
            for (step, c) in trace.iter().enumerate() {
                writeln!(buf, "{step},{c:.16e}")?;
            }
        }
        OutputFormat::Jsonl => {
            for (step, c) in trace.iter().enumerate() {
                serde_json::to_writer(&mut buf, &serde_json::json!({"step": step, "cos_coupling": c}))?;
                buf.push(b'\n');
            }
        }
    }
    fs::write(&path, buf)?;
    println!("couple: {} steps written to {}", trace.len(), path.display());
    Ok(())
}

const SWEEP_RHO_GRID: [f64; 3] = [0.05, 0.1, 0.3];
const SWEEP_COS_GRID: [f64; 3] = [0.0, 0.5, 0.9];
const SWEEP_BATCH_GRID: [usize; 2] = [8, 32];

/// Grid cells for a sweep: rho always varies; quadratic tasks additionally
/// vary the anchor coupling, data-driven tasks vary the batch sizes.
fn sweep_cells(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mut cells = Vec::new();
    for &rho in &SWEEP_RHO_GRID {
        match base.task {
            Task::CoupledQuadratic => {
                for &cos in &SWEEP_COS_GRID {
                    let mut c = base.clone();
                    c.rho = rho;
                    c.target_cos = cos;
                    cells.push((format!("rho{rho}_cos{cos}"), c));
                }
            }
            Task::BlobsClasswise | Task::BlobsRandom => {
                for &b in &SWEEP_BATCH_GRID {
                    let mut c = base.clone();
                    c.rho = rho;
                    c.forget_batch = b;
                    c.retain_batch = b;
                    cells.push((format!("rho{rho}_batch{b}"), c));
                }
            }
            Task::Representation => {
                let mut c = base.clone();
                c.rho = rho;
                cells.push((format!("rho{rho}"), c));
            }
        }
    }
    cells
}

fn run_sweep(base: &ExperimentConfig, out: &Path, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(out)?;
    let cells = sweep_cells(base);
    // Each cell owns its config and result slot; threads share nothing mutable.
    let mut results: Vec<Result<RunRecord>> = Vec::with_capacity(cells.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|(_, config)| scope.spawn(move || run(config)))
            .collect();
        for handle in handles {
            results.push(handle.join().expect("sweep cell thread panicked"));
        }
    });
    let mut index = Vec::new();
    for ((name, config), result) in cells.iter().zip(results) {
        let record = result?;
        let metrics = out.join(format!("sweep_{name}.{}", format.extension()));
        write_rows(&record, &metrics, format)?;
        index.push(serde_json::json!({
            "cell": name,
            "config": config,
            "final_summary": record.final_summary,
        }));
    }
    let mut buf = Vec::new();
    for entry in &index {
        serde_json::to_writer(&mut buf, entry)?;
        buf.push(b'\n');
    }
    fs::write(out.join("sweep_index.jsonl"), buf)?;
    println!("sweep: {} cells written to {}", index.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Audit { seed, out } => {
            let all_passed = run_audit_command(seed, &out)?;
            Ok(if all_passed { EXIT_OK } else { EXIT_AUDIT_FAILURE })
        }
        Command::Run { config, out, seed, format } => {
            run_single(&load_config(&config, seed)?, &out, format)?;
            Ok(EXIT_OK)
        }
        Command::Ablate { config, out, seed, format } => {
            run_ablate(&load_config(&config, seed)?, &out, format)?;
            Ok(EXIT_OK)
        }
        Command::Couple { config, out, seed, format } => {
            run_couple(&load_config(&config, seed)?, &out, format)?;
            Ok(EXIT_OK)
        }
        Command::Sweep { config, out, seed, format } => {
            run_sweep(&load_config(&config, seed)?, &out, format)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parse `argv` (including the program name), execute the selected
/// subcommand, and return the process exit code: 0 on success, 1 when an
/// audit assertion fails, 2 on configuration or I/O errors.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return EXIT_CONFIG_ERROR;
        }
        Err(e) => {
            // --help / --version
            let _ = e.print();
            return EXIT_OK;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Io(_) | Error::Json(_) | Error::Config(_) => EXIT_CONFIG_ERROR,
                // Any runtime failure traces back to the supplied configuration.
                _ => EXIT_CONFIG_ERROR,
            }
        }
    }
}
