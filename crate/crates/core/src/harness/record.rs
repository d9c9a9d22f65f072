//! Per-replication results and their CSV form.
//!
//! Record CSVs hold only deterministic fields, so two runs with the same
//! config are byte-identical. Wall-clock time goes to a separate timings file.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::projection_distance;
use crate::simulation::{Confounding, Panel, SimulationTruth};

use super::method::Method;

/// Counters carried alongside a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecordDiagnostics {
    pub final_norm: f64,
    pub restart_index: usize,
    pub singular_jacobians: usize,
    pub trimmed_queries: usize,
    pub truncated_weights: usize,
}

/// One method run on one replication of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub panel: Panel,
    pub method: Method,
    pub confounding: Confounding,
    pub n: usize,
    pub replication: usize,
    /// `None` when the run failed; see `error`.
    pub beta_hat: Option<DMatrix<f64>>,
    pub distance: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub diagnostics: RecordDiagnostics,
    pub error: Option<String>,
}

const FIXED_COLUMNS: [&str; 13] = [
    "scenario",
    "method",
    "confounding",
    "n",
    "replication",
    "distance",
    "converged",
    "iterations",
    "final_norm",
    "restart_index",
    "singular_jacobians",
    "trimmed_queries",
    "truncated_weights",
];

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Distance recomputed from the stored basis.
    pub fn recompute_distance(&self, truth: &SimulationTruth) -> Option<f64> {
        let b = self.beta_hat.as_ref()?;
        projection_distance(b, &truth.beta_true).ok().map(|d| d.value())
    }

    /// Column names for bases of shape `p × d`, vec order (column-major).
    pub fn header(p: usize, d: usize) -> Vec<String> {
        let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        h.push("error".into());
        for k in 1..=d {
            for j in 1..=p {
                h.push(format!("beta_{j}_{k}"));
            }
        }
        h
    }

    fn row(&self, p: usize, d: usize) -> Vec<String> {
        let dg = &self.diagnostics;
        let mut row = vec![
            self.panel.to_string(),
            self.method.to_string(),
            self.confounding.to_string(),
            self.n.to_string(),
            self.replication.to_string(),
            self.distance.map(fmt_real).unwrap_or_default(),
            self.converged.to_string(),
            self.iterations.to_string(),
            fmt_real(dg.final_norm),
            dg.restart_index.to_string(),
            dg.singular_jacobians.to_string(),
            dg.trimmed_queries.to_string(),
            dg.truncated_weights.to_string(),
            self.error.clone().unwrap_or_default(),
        ];
        match &self.beta_hat {
            Some(b) => row.extend(b.iter().map(|&v| fmt_real(v))),
            None => row.extend(std::iter::repeat_n(String::new(), p * d)),
        }
        row
    }

    fn from_row(header: &csv::StringRecord, rec: &csv::StringRecord) -> Result<Self> {
        let col = |name: &str| -> Result<&str> {
            header
                .iter()
                .position(|h| h == name)
                .and_then(|i| rec.get(i))
                .ok_or_else(|| Error::InvalidConfig(format!("record is missing `{name}`")))
        };
        let num = |name: &str| -> Result<usize> {
            col(name)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad integer in `{name}`")))
        };
        let real = |s: &str, name: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number in `{name}`")))
        };
        let mut beta = Vec::new();
        let (mut p, mut d) = (0, 0);
        for (i, name) in header.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("beta_") {
                let (j, k) = rest
                    .split_once('_')
                    .and_then(|(j, k)| Some((j.parse::<usize>().ok()?, k.parse::<usize>().ok()?)))
                    .ok_or_else(|| Error::InvalidConfig(format!("bad basis column `{name}`")))?;
                p = p.max(j);
                d = d.max(k);
                beta.push(rec.get(i).unwrap_or(""));
            }
        }
        if beta.len() != p * d {
            return Err(Error::InvalidConfig("basis columns do not form a matrix".into()));
        }
        let beta_hat = if beta.iter().all(|s| s.is_empty()) {
            None
        } else {
            let v = beta
                .iter()
                .map(|s| real(s, "beta"))
                .collect::<Result<Vec<_>>>()?;
            Some(DMatrix::from_vec(p, d, v))
        };
        let distance = match col("distance")? {
            "" => None,
            s => Some(real(s, "distance")?),
        };
        let error = match col("error")? {
            "" => None,
            s => Some(s.to_string()),
        };
        Ok(Self {
            panel: col("scenario")?.parse()?,
            method: col("method")?.parse()?,
            confounding: col("confounding")?.parse()?,
            n: num("n")?,
            replication: num("replication")?,
            beta_hat,
            distance,
            converged: col("converged")?
                .parse()
                .map_err(|_| Error::InvalidConfig("bad boolean in `converged`".into()))?,
            iterations: num("iterations")?,
            wall_seconds: 0.0,
            diagnostics: RecordDiagnostics {
                final_norm: real(col("final_norm")?, "final_norm")?,
                restart_index: num("restart_index")?,
                singular_jacobians: num("singular_jacobians")?,
                trimmed_queries: num("trimmed_queries")?,
                truncated_weights: num("truncated_weights")?,
            },
            error,
        })
    }
}

/// Writes records that share a basis shape, header first.
pub fn write_records<W: Write>(w: W, records: &[RunRecord], p: usize, d: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RunRecord::header(p, d))?;
    for r in records {
        if let Some(b) = &r.beta_hat {
            if b.shape() != (p, d) {
                return Err(Error::DimensionMismatch(format!(
                    "record basis is {}×{}, table expects {p}×{d}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        wtr.write_record(r.row(p, d))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    rdr.records()
        .map(|rec| RunRecord::from_row(&header, &rec?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Case;

    fn sample(beta: Option<DMatrix<f64>>) -> RunRecord {
        let truth = SimulationTruth::for_dimension(6);
        let distance = beta
            .as_ref()
            .map(|b| projection_distance(b, &truth.beta_true).unwrap().value());
        RunRecord {
            panel: Panel { case: Case::Case2, p: 6 },
            method: Method::IpwCausal,
            confounding: Confounding::Confounded,
            n: 200,
            replication: 3,
            error: beta.is_none().then(|| "solver failed, with a comma".to_string()),
            beta_hat: beta,
            distance,
            converged: true,
            iterations: 12,
            wall_seconds: 1.5,
            diagnostics: RecordDiagnostics {
                final_norm: 1e-5,
                restart_index: 1,
                singular_jacobians: 0,
                trimmed_queries: 4,
                truncated_weights: 2,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let b = DMatrix::from_fn(6, 2, |i, j| ((i * 7 + j * 3) as f64).sin() / 3.0);
        let recs = vec![sample(Some(b)), sample(None)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs, 6, 2).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        let mut expect = recs.clone();
        for r in &mut expect {
            r.wall_seconds = 0.0;
        }
        assert_eq!(back, expect);
    }

    #[test]
    fn stored_distance_is_recomputable() {
        let b = DMatrix::from_fn(6, 2, |i, j| 1.0 / (1 + i + 2 * j) as f64);
        let mut buf = Vec::new();
        write_records(&mut buf, &[sample(Some(b))], 6, 2).unwrap();
        let r = &read_records(buf.as_slice()).unwrap()[0];
        let truth = SimulationTruth::for_dimension(6);
        assert!((r.recompute_distance(&truth).unwrap() - r.distance.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut r = sample(None);
        r.beta_hat = Some(DMatrix::zeros(12, 2));
        assert!(write_records(Vec::new(), &[r], 6, 2).is_err());
    }
}
