//! Grid execution with per-record files for crash resume.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! config.toml                  effective configuration
//! records/<scenario>/<method>-<rep>.csv   one record each (resume unit)
//! records/<scenario>/<method>-<rep>.time  wall seconds for that record
//! <scenario>_records.csv       all records of a scenario
//! summary.csv, boxplot.csv, timings.csv
//! ```
//!
//! Data for replication `r` of scenario `s` is seeded from the child stream
//! `(base_seed, s, r, 0, variant)`; method fits use `(base_seed, s, r, 1, method)`
//! with the method's position in [`Method::ALL`]. Outputs are therefore
//! independent of worker count and of which methods are selected.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::projection_distance;
use crate::rng::RngStream;
use crate::simulation::{generate, Confounding, Dataset, Panel, SimulationTruth};

use super::config::BenchConfig;
use super::method::{fit_method, Method, MethodSettings};
use super::record::{read_records, write_records, RecordDiagnostics, RunRecord};
use super::summary::{summarize, write_boxplot, write_summary, SummaryRow};

/// What a bench run produced.
#[derive(Debug)]
pub struct BenchOutcome {
    /// In grid order: scenario, then method, then replication.
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Records loaded from an earlier run instead of recomputed.
    pub resumed: usize,
}

impl BenchOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

fn variant_index(c: Confounding) -> u64 {
    match c {
        Confounding::None => 0,
        Confounding::NoiseOnly => 1,
        Confounding::Confounded => 2,
    }
}

fn method_index(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).expect("method in ALL") as u64
}

/// Seed of the dataset a method sees in replication `r` of scenario `s`.
pub fn data_seed(base_seed: u64, s: usize, r: usize, variant: Confounding) -> u64 {
    RngStream::new(base_seed)
        .descend(&[s as u64, r as u64, 0, variant_index(variant)])
        .key()
}

/// Stream handed to a method's fit in replication `r` of scenario `s`.
pub fn method_stream(base_seed: u64, s: usize, r: usize, method: Method) -> RngStream {
    RngStream::new(base_seed).descend(&[s as u64, r as u64, 1, method_index(method)])
}

/// Fits one method and wraps the outcome, turning errors into a failed record.
pub fn run_method(
    panel: Panel,
    method: Method,
    replication: usize,
    data: &Dataset,
    truth: &SimulationTruth,
    settings: &MethodSettings,
    rng: &mut RngStream,
) -> RunRecord {
    let started = Instant::now();
    let mut rec = RunRecord {
        panel,
        method,
        confounding: method.data_variant(),
        n: data.n(),
        replication,
        beta_hat: None,
        distance: None,
        converged: false,
        iterations: 0,
        wall_seconds: 0.0,
        diagnostics: RecordDiagnostics::default(),
        error: None,
    };
    let fitted = fit_method(method, data, Some(truth), settings, rng).and_then(|fit| {
        let b = fit.beta_hat.matrix().clone();
        let dist = projection_distance(&b, &truth.beta_true)?.value();
        Ok((fit, b, dist))
    });
    match fitted {
        Ok((fit, b, dist)) => {
            rec.beta_hat = Some(b);
            rec.distance = Some(dist);
            rec.converged = fit.converged;
            rec.iterations = fit.iterations;
            rec.diagnostics = RecordDiagnostics {
                final_norm: fit.final_norm,
                restart_index: fit.restart_index,
                singular_jacobians: fit.singular_jacobians,
                trimmed_queries: fit.diagnostics.trimmed_queries,
                truncated_weights: fit.diagnostics.truncated_weights,
            };
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.wall_seconds = started.elapsed().as_secs_f64();
    rec
}

#[derive(Debug, Clone, Copy)]
struct Job {
    s: usize,
    panel: Panel,
    method: Method,
    r: usize,
}

fn record_stem(dir: &Path, job: &Job) -> PathBuf {
    dir.join("records")
        .join(job.panel.to_string())
        .join(format!("{}-{:04}", job.method, job.r))
}

/// Loads a finished record, or `None` if it is missing or unreadable.
fn load_existing(stem: &Path) -> Option<RunRecord> {
    let file = fs::File::open(stem.with_extension("csv")).ok()?;
    let mut recs = read_records(file).ok()?;
    if recs.len() != 1 {
        return None;
    }
    let mut rec = recs.pop()?;
    if let Ok(t) = fs::read_to_string(stem.with_extension("time")) {
        rec.wall_seconds = t.trim().parse().unwrap_or(0.0);
    }
    Some(rec)
}

/// Writes via a temporary file so a crash never leaves a half record.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn persist(stem: &Path, rec: &RunRecord, p: usize, d: usize) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, std::slice::from_ref(rec), p, d)?;
    write_atomic(&stem.with_extension("csv"), &buf)?;
    write_atomic(&stem.with_extension("time"), format!("{:.6}\n", rec.wall_seconds).as_bytes())
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutcome> {
    run_bench_with_progress(cfg, |_| {})
}

/// Runs the grid, calling `progress` after each newly computed record.
pub fn run_bench_with_progress<F>(cfg: &BenchConfig, progress: F) -> Result<BenchOutcome>
where
    F: Fn(&RunRecord) + Sync,
{
    cfg.validate()?;
    let out = &cfg.output_dir;
    for panel in &cfg.scenarios {
        fs::create_dir_all(out.join("records").join(panel.to_string()))?;
    }
    write_atomic(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;

    let mut jobs = Vec::new();
    for (s, &panel) in cfg.scenarios.iter().enumerate() {
        for &method in &cfg.methods {
            for r in 0..cfg.replications {
                jobs.push(Job { s, panel, method, r });
            }
        }
    }

    let mut done: Vec<Option<RunRecord>> = jobs.iter().map(|j| load_existing(&record_stem(out, j))).collect();
    let resumed = done.iter().filter(|r| r.is_some()).count();
    let pending: Vec<usize> = (0..jobs.len()).filter(|&i| done[i].is_none()).collect();

    let settings = cfg.method_settings();
    let writer = Mutex::new(());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers()?)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let computed: Vec<(usize, Result<RunRecord>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let job = jobs[i];
                let variant = job.method.data_variant();
                let spec = job
                    .panel
                    .scenario(variant, cfg.n, data_seed(cfg.base_seed, job.s, job.r, variant));
                let result = generate(&spec).and_then(|(data, truth)| {
                    let mut rng = method_stream(cfg.base_seed, job.s, job.r, job.method);
                    let rec = run_method(job.panel, job.method, job.r, &data, &truth, &settings, &mut rng);
                    let _guard = writer.lock().unwrap_or_else(|e| e.into_inner());
                    persist(&record_stem(out, &job), &rec, job.panel.p, cfg.d)?;
                    Ok(rec)
                });
                if let Ok(rec) = &result {
                    progress(rec);
                }
                (i, result)
            })
            .collect()
    });
    for (i, rec) in computed {
        done[i] = Some(rec?);
    }
    let records: Vec<RunRecord> = done.into_iter().map(|r| r.expect("every job resolved")).collect();

    for panel in &cfg.scenarios {
        let recs: Vec<RunRecord> = records.iter().filter(|r| r.panel == *panel).cloned().collect();
        let path = out.join(format!("{panel}_records.csv"));
        write_records(BufWriter::new(fs::File::create(path)?), &recs, panel.p, cfg.d)?;
    }
    let summary = summarize(&records)?;
    write_summary(BufWriter::new(fs::File::create(out.join("summary.csv"))?), &summary)?;
    write_boxplot(BufWriter::new(fs::File::create(out.join("boxplot.csv"))?), &records)?;
    write_timings(&out.join("timings.csv"), &records)?;
    Ok(BenchOutcome {
        records,
        summary,
        resumed,
    })
}

fn write_timings(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    wtr.write_record(["scenario", "method", "replication", "wall_seconds"])?;
    for r in records {
        wtr.write_record([
            r.panel.to_string(),
            r.method.to_string(),
            r.replication.to_string(),
            format!("{:.6}", r.wall_seconds),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_depend_on_every_coordinate() {
        let a = data_seed(1, 0, 0, Confounding::Confounded);
        assert_ne!(a, data_seed(2, 0, 0, Confounding::Confounded));
        assert_ne!(a, data_seed(1, 1, 0, Confounding::Confounded));
        assert_ne!(a, data_seed(1, 0, 1, Confounding::Confounded));
        assert_ne!(a, data_seed(1, 0, 0, Confounding::None));
        let k = method_stream(1, 0, 0, Method::Pca).key();
        assert_ne!(k, method_stream(1, 0, 0, Method::IpwCausal).key());
        assert_ne!(k, a);
    }

    #[test]
    fn methods_sharing_a_variant_share_data() {
        let ipw = data_seed(9, 0, 3, Method::IpwCausal.data_variant());
        let pca = data_seed(9, 0, 3, Method::Pca.data_variant());
        assert_eq!(ipw, pca);
    }

    #[test]
    fn pca_smoke_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            methods: vec![Method::Pca],
            replications: 1,
            n: 30,
            workers: 1,
            output_dir: dir.path().to_path_buf(),
            ..BenchConfig::default()
        };
        let t = Instant::now();
        let out = run_bench(&cfg).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].converged);
        assert_eq!(out.records[0].iterations, 0);
        assert!(dir.path().join("summary.csv").exists());
        assert!(dir.path().join("case2-p6_records.csv").exists());
    }
}
