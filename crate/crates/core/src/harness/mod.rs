//! Benchmark grid over simulated scenarios, methods and replications.

pub mod bench;
pub mod config;
pub mod method;
pub mod record;
pub mod summary;

pub use bench::{run_bench, run_bench_with_progress, run_method, BenchOutcome};
pub use config::BenchConfig;
pub use method::{fit_method, FeatureChoice, Method, MethodFit, MethodSettings, NuisanceSettings, StartRule};
pub use record::{read_records, write_records, RecordDiagnostics, RunRecord};
pub use summary::{format_table, summarize, write_boxplot, write_summary, DistanceStats, SummaryRow};
