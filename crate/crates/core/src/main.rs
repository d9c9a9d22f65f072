//! Command-line front end: simulate, fit, bench, distance, summarize.
//!
//! Exit codes: 0 on success, 2 when a bench finished but some records
//! failed, 1 on configuration or IO errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causal_sdr::harness::{
    fit_method, format_table, read_records, run_bench_with_progress, summarize, write_summary, BenchConfig,
    Method,
};
use causal_sdr::simulation::fmt_f64;
use causal_sdr::{generate, projection_distance, Confounding, Dataset, Error, Panel, Result, RngStream};
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "causal-sdr", version, about = "Causal sufficient dimension reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV (y, a1..ap, c1..c4) and optionally its true basis.
    Simulate {
        #[arg(long, default_value = "case2-p6")]
        scenario: Panel,
        #[arg(long, default_value = "confounded")]
        confounding: Confounding,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the true basis (p rows, d columns).
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Fit one method to a dataset CSV and print the estimated basis.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        /// Bench config whose solver, kernel and nuisance settings are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// True basis CSV; enables the distance report and `start = "truth"`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Where to write the estimated basis.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario × method × replication grid.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Methods to run, comma separated (overrides the config).
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        /// Scenarios such as case2-p6, comma separated (overrides the config).
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<Panel>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Projection distance between two basis CSVs.
    Distance { a: PathBuf, b: PathBuf },
    /// Summary table from one or more record CSVs.
    Summarize {
        records: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(File::open(path)?));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let row = rec?
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidConfig(format!("{}: not a numeric matrix", path.display())))?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig(format!("{}: ragged or empty matrix", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn write_matrix(w: impl Write, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    wtr.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            scenario,
            confounding,
            n,
            seed,
            out,
            truth_out,
        } => {
            let (data, truth) = generate(&scenario.scenario(confounding, n, seed))?;
            data.write_csv(BufWriter::new(File::create(&out)?))?;
            if let Some(path) = truth_out {
                write_matrix(BufWriter::new(File::create(path)?), &truth.beta_true)?;
            }
            eprintln!("wrote {n} samples to {}", out.display());
        }
        Command::Fit {
            data,
            method,
            config,
            seed,
            truth,
            out,
        } => {
            let cfg = match config {
                Some(p) => BenchConfig::load(&p)?,
                None => BenchConfig::default(),
            };
            let data = Dataset::read_csv(BufReader::new(File::open(&data)?))?;
            let truth = truth
                .map(|p| -> Result<_> {
                    let beta_true = read_matrix(&p)?;
                    let d = beta_true.ncols();
                    Ok(causal_sdr::SimulationTruth { beta_true, d })
                })
                .transpose()?;
            let fit = fit_method(method, &data, truth.as_ref(), &cfg.method_settings(), &mut RngStream::new(seed))?;
            let b = fit.beta_hat.matrix();
            println!("method      {method}");
            println!("converged   {}", fit.converged);
            println!("iterations  {}", fit.iterations);
            println!("final_norm  {:.3e}", fit.final_norm);
            if let Some(t) = &truth {
                println!("distance    {:.6}", projection_distance(b, &t.beta_true)?.value());
            }
            println!("beta_hat");
            for row in b.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.5}")).collect();
                println!("  {}", cells.join(" "));
            }
            if let Some(path) = out {
                write_matrix(BufWriter::new(File::create(path)?), b)?;
            }
        }
        Command::Bench {
            config,
            out,
            seed,
            method,
            scenario,
            replications,
            n,
            workers,
            quiet,
        } => {
            let mut cfg = match config {
                Some(p) => BenchConfig::load(&p)?,
                None => BenchConfig::default(),
            };
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if !method.is_empty() {
                cfg.methods = method;
            }
            if !scenario.is_empty() {
                cfg.scenarios = scenario;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let outcome = run_bench_with_progress(&cfg, |r| {
                if !quiet {
                    match (&r.error, r.distance) {
                        (Some(e), _) => eprintln!("{} {} rep {}: failed: {e}", r.panel, r.method, r.replication),
                        (None, Some(d)) => eprintln!(
                            "{} {} rep {}: distance {d:.4} ({:.1}s)",
                            r.panel, r.method, r.replication, r.wall_seconds
                        ),
                        _ => {}
                    }
                }
            })?;
            if outcome.resumed > 0 {
                eprintln!("resumed {} existing records", outcome.resumed);
            }
            print!("{}", format_table(&outcome.summary));
            println!("outputs in {}", cfg.output_dir.display());
            let failures = outcome.failures();
            if failures > 0 {
                eprintln!("{failures} record(s) failed; see the error column");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Distance { a, b } => {
            println!("{:.12}", projection_distance(&read_matrix(&a)?, &read_matrix(&b)?)?.value());
        }
        Command::Summarize { records, out } => {
            if records.is_empty() {
                return Err(Error::InvalidConfig("no record files given".into()));
            }
            let mut all = Vec::new();
            for p in &records {
                all.extend(read_records(BufReader::new(File::open(p)?))?);
            }
            let rows = summarize(&all)?;
            print!("{}", format_table(&rows));
            if let Some(path) = out {
                write_summary(BufWriter::new(File::create(path)?), &rows)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
