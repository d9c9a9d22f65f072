//! Per (scenario, method) statistics over replications.

use std::io::Write;

use crate::error::{Error, Result};
use crate::nuisance::quantile_sorted;
use crate::simulation::Panel;

use super::method::Method;
use super::record::RunRecord;

/// Five-number summary plus moments of the successful distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

impl DistanceStats {
    /// `None` for an empty slice. Quantiles are type 7.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean,
            sd,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub panel: Panel,
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    pub stats: Option<DistanceStats>,
    /// Share of all runs (failures included) that converged.
    pub convergence_rate: f64,
    pub mean_iterations: f64,
}

/// Groups records by (scenario, method) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no records to summarize".into()));
    }
    let mut keys: Vec<(Panel, Method)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.panel, r.method)) {
            keys.push((r.panel, r.method));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(panel, method)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.panel == panel && r.method == method)
                .collect();
            let distances: Vec<f64> = group.iter().filter_map(|r| r.distance).collect();
            let runs = group.len();
            SummaryRow {
                panel,
                method,
                runs,
                failures: group.iter().filter(|r| r.failed()).count(),
                stats: DistanceStats::from_values(&distances),
                convergence_rate: group.iter().filter(|r| r.converged).count() as f64 / runs as f64,
                mean_iterations: group.iter().map(|r| r.iterations as f64).sum::<f64>() / runs as f64,
            }
        })
        .collect())
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "scenario",
        "method",
        "runs",
        "failures",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "sd",
        "convergence_rate",
        "mean_iterations",
    ])?;
    for r in rows {
        let mut row = vec![
            r.panel.to_string(),
            r.method.to_string(),
            r.runs.to_string(),
            r.failures.to_string(),
        ];
        match r.stats {
            Some(s) => row.extend(
                [s.min, s.q1, s.median, s.q3, s.max, s.mean, s.sd]
                    .iter()
                    .map(|v| format!("{v:.6}")),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        row.push(format!("{:.4}", r.convergence_rate));
        row.push(format!("{:.2}", r.mean_iterations));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Tidy `(scenario, method, distance)` rows for plotting.
pub fn write_boxplot<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scenario", "method", "replication", "distance"])?;
    for r in records {
        if let Some(d) = r.distance {
            wtr.write_record([
                r.panel.to_string(),
                r.method.to_string(),
                r.replication.to_string(),
                format!("{d:.16e}"),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Pretty fixed-width table for terminals.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:<20} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6} {:>7}\n",
        "scenario", "method", "runs", "min", "q1", "median", "q3", "max", "conv", "iters"
    );
    for r in rows {
        let cells = match r.stats {
            Some(s) => format!(
                "{:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                s.min, s.q1, s.median, s.q3, s.max
            ),
            None => format!("{:>7} {:>7} {:>7} {:>7} {:>7}", "-", "-", "-", "-", "-"),
        };
        out.push_str(&format!(
            "{:<10} {:<20} {:>4} {} {:>6.2} {:>7.1}\n",
            r.panel.to_string(),
            r.method.name(),
            r.runs,
            cells,
            r.convergence_rate,
            r.mean_iterations
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::RecordDiagnostics;
    use crate::simulation::{Case, Confounding};
    use proptest::prelude::*;

    fn rec(method: Method, rep: usize, distance: Option<f64>) -> RunRecord {
        RunRecord {
            panel: Panel { case: Case::Case2, p: 6 },
            method,
            confounding: Confounding::Confounded,
            n: 50,
            replication: rep,
            beta_hat: None,
            distance,
            converged: distance.is_some(),
            iterations: 2 * rep,
            wall_seconds: 0.0,
            diagnostics: RecordDiagnostics::default(),
            error: distance.is_none().then(|| "boom".into()),
        }
    }

    #[test]
    fn single_record_collapses_quantiles() {
        let rows = summarize(&[rec(Method::Pca, 0, Some(0.7))]).unwrap();
        let s = rows[0].stats.unwrap();
        for v in [s.min, s.q1, s.median, s.q3, s.max, s.mean] {
            assert_eq!(v, 0.7);
        }
        assert_eq!(s.sd, 0.0);
    }

    #[test]
    fn median_of_one_two_three() {
        let recs: Vec<_> = [3.0, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &d)| rec(Method::Pca, i, Some(d)))
            .collect();
        assert_eq!(summarize(&recs).unwrap()[0].stats.unwrap().median, 2.0);
    }

    #[test]
    fn failures_counted_and_excluded() {
        let recs = vec![
            rec(Method::IpwCausal, 0, Some(1.0)),
            rec(Method::IpwCausal, 1, None),
            rec(Method::Pca, 0, Some(2.0)),
        ];
        let rows = summarize(&recs).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, Method::IpwCausal);
        assert_eq!(rows[0].runs, 2);
        assert_eq!(rows[0].failures, 1);
        assert_eq!(rows[0].stats.unwrap().max, 1.0);
        assert_eq!(rows[0].convergence_rate, 0.5);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(summarize(&[]).is_err());
    }

    fn sort_oracle(v: &[f64], prob: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = prob * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] * (1.0 - (pos - lo as f64)) + s[hi] * (pos - lo as f64)
    }

    proptest! {
        #[test]
        fn quantiles_match_sort_oracle(v in prop::collection::vec(0.0f64..2.0, 1..100)) {
            let s = DistanceStats::from_values(&v).unwrap();
            for (got, prob) in [(s.q1, 0.25), (s.median, 0.5), (s.q3, 0.75)] {
                prop_assert!((got - sort_oracle(&v, prob)).abs() < 1e-12);
            }
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }
    }
}
