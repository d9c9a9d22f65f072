//! Seeded data-generating processes for the two treatment designs.
//!
//! Baseline covariates (always four):
//! `C₁ ~ χ²₂`, `C₂ ~ N(0,1)`, `C₃ = |C₁ + C₂|`, `C₄ = (C₁C₃)^½`.
//!
//! Case 1 draws a jointly normal block (`A₁, A₂` and, for `p = 12`,
//! `A₇..A₁₂`) with covariance `0.5^|i-j|`, then `A₃ ~ N(|A₁+A₂|, |A₁|)`,
//! `A₄ ~ N(|A₁+A₂|^½, |A₂|)`, `A₅ ~ Bern(logit⁻¹(A₂))`, `A₆ ~ Bern(Φ(A₂))`.
//! Case 2 draws the whole treatment from a multivariate normal with the
//! same covariance. In both cases the means are linear in `C`.
//!
//! The outcome is `Y = (Aᵀβ₁)² + (Aᵀβ₂)² + ΣCᵢ + 0.5ε`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::projector;
use crate::rng::{standard_normal_cdf, RngStream};

pub const COVARIATE_DIM: usize = 4;
pub const TRUE_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    Case1,
    Case2,
}

/// Which confounding pathways are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Confounding {
    /// `A ⟂ C` with zero means, and `C` absent from the outcome.
    None,
    /// `A ⟂ C`, but `ΣCᵢ` stays in the outcome.
    NoiseOnly,
    /// Full design: treatment means depend on `C`.
    Confounded,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
        })
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case1" | "1" => Ok(Case::Case1),
            "case2" | "2" => Ok(Case::Case2),
            _ => Err(Error::UnknownName {
                kind: "case",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Confounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confounding::None => "none",
            Confounding::NoiseOnly => "noise",
            Confounding::Confounded => "confounded",
        })
    }
}

impl FromStr for Confounding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Confounding::None),
            "noise" | "noiseonly" | "noise_only" => Ok(Confounding::NoiseOnly),
            "confounded" => Ok(Confounding::Confounded),
            _ => Err(Error::UnknownName {
                kind: "confounding",
                value: s.into(),
            }),
        }
    }
}

/// A treatment design and dimension, e.g. `case2-p6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Panel {
    pub case: Case,
    pub p: usize,
}

impl Panel {
    pub fn new(case: Case, p: usize) -> Result<Self> {
        if p != 6 && p != 12 {
            return Err(Error::InvalidConfig(format!("p must be 6 or 12, got {p}")));
        }
        Ok(Self { case, p })
    }

    pub fn scenario(&self, confounding: Confounding, n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            case: self.case,
            p: self.p,
            confounding,
            n,
            seed,
        }
    }
}

impl fmt::Display for Panel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-p{}", self.case, self.p)
    }
}

impl FromStr for Panel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownName {
            kind: "scenario",
            value: s.into(),
        };
        let (case, p) = s.split_once('-').ok_or_else(bad)?;
        let p = p.strip_prefix('p').ok_or_else(bad)?;
        Panel::new(case.parse()?, p.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for Panel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Panel> for String {
    fn from(p: Panel) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    pub case: Case,
    pub p: usize,
    pub confounding: Confounding,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn panel(&self) -> Panel {
        Panel {
            case: self.case,
            p: self.p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Panel::new(self.case, self.p)?;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Observed samples: outcome `y`, treatment rows `a` (n × p), covariates `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if a.nrows() != n || c.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, a has {}, c has {}",
                a.nrows(),
                c.nrows()
            )));
        }
        if y.iter().chain(a.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("dataset".into()));
        }
        Ok(Self { y, a, c })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn q(&self) -> usize {
        self.c.ncols()
    }

    /// Writes `y,a1..ap,c1..cq` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("a{j}")));
        header.extend((1..=self.q()).map(|j| format!("c{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![fmt_f64(self.y[i])];
            row.extend(self.a.row(i).iter().map(|&v| fmt_f64(v)));
            row.extend(self.c.row(i).iter().map(|&v| fmt_f64(v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let mut a_cols = Vec::new();
        let mut c_cols = Vec::new();
        let mut y_col = None;
        for (idx, name) in header.iter().enumerate() {
            let name = name.trim();
            if name == "y" {
                y_col = Some(idx);
            } else if let Some(j) = name.strip_prefix('a').and_then(|s| s.parse::<usize>().ok()) {
                a_cols.push((j, idx));
            } else if let Some(j) = name.strip_prefix('c').and_then(|s| s.parse::<usize>().ok()) {
                c_cols.push((j, idx));
            } else {
                return Err(Error::InvalidConfig(format!("unexpected column `{name}`")));
            }
        }
        let y_col = y_col.ok_or_else(|| Error::InvalidConfig("missing column `y`".into()))?;
        a_cols.sort();
        c_cols.sort();
        let (mut y, mut a, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let get = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("bad number in column {idx}")))
            };
            y.push(get(y_col)?);
            for &(_, idx) in &a_cols {
                a.push(get(idx)?);
            }
            for &(_, idx) in &c_cols {
                c.push(get(idx)?);
            }
        }
        let n = y.len();
        Dataset::new(
            DVector::from_vec(y),
            DMatrix::from_row_slice(n, a_cols.len(), &a),
            DMatrix::from_row_slice(n, c_cols.len(), &c),
        )
    }
}

/// Seventeen significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Ground-truth reduction for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub beta_true: DMatrix<f64>,
    pub d: usize,
}

impl SimulationTruth {
    /// `β₁ = (1,1,1,1,1,1)/√6`, `β₂ = (1,-1,1,-1,1,-1)/√6`, zero-padded to `p`.
    pub fn for_dimension(p: usize) -> Self {
        let s = 6f64.sqrt();
        let mut b = DMatrix::zeros(p, TRUE_DIM);
        for i in 0..6.min(p) {
            b[(i, 0)] = 1.0 / s;
            b[(i, 1)] = if i % 2 == 0 { 1.0 } else { -1.0 } / s;
        }
        Self {
            beta_true: b,
            d: TRUE_DIM,
        }
    }
}

/// Column-space projector of the true reduction.
pub fn true_projection_targets(truth: &SimulationTruth) -> DMatrix<f64> {
    projector(&truth.beta_true).expect("true basis has full column rank")
}

/// Noise terms behind a generated dataset.
#[cfg(any(test, feature = "latent"))]
#[derive(Debug, Clone)]
pub struct Latent {
    /// Outcome noise ε (the outcome carries `0.5ε`).
    pub eps: DVector<f64>,
    /// Uniforms behind `A₅` and `A₆` in Case 1 (zero in Case 2).
    pub bernoulli_uniforms: DMatrix<f64>,
}

struct Draws {
    data: Dataset,
    #[cfg_attr(not(any(test, feature = "latent")), allow(dead_code))]
    eps: DVector<f64>,
    #[cfg_attr(not(any(test, feature = "latent")), allow(dead_code))]
    bern: DMatrix<f64>,
}

fn ar_cholesky(k: usize) -> DMatrix<f64> {
    let cov = DMatrix::from_fn(k, k, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    cov.cholesky().expect("AR(0.5) covariance is positive-definite").l()
}

/// Treatment means as functions of the covariates.
fn case2_means(c: &[f64], p: usize) -> Vec<f64> {
    let [c1, c2, c3, c4] = [c[0], c[1], c[2], c[3]];
    let sum = c1 + c2 + c3 + c4;
    let mut mu = vec![
        sum,
        -c1 + c2 - c3 + c4,
        c1 - c2 - c3 + c4,
        -c1 + c2 + c3 - c4,
        sum - 2.0 * c3,
        -c1 + c2 + c3 + c4,
    ];
    if p == 12 {
        mu.extend([c1, c2, c3, -c1, -c2, -c3]);
    }
    mu
}

/// Means of the normal block `(A₁, A₂[, A₇..A₁₂])` in Case 1.
fn case1_block_means(c: &[f64], p: usize) -> Vec<f64> {
    let [c1, c2, c3, c4] = [c[0], c[1], c[2], c[3]];
    let mut mu = vec![c1 + c2 + c3 + c4, -c1 + c2 - c3 + c4];
    if p == 12 {
        mu.extend([c1, c2, c3, -c1 + c2, -c2 + c3, -c3 + c4]);
    }
    mu
}

fn draw(spec: &ScenarioSpec) -> Result<Draws> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let truth = SimulationTruth::for_dimension(p);
    let mut rng = RngStream::new(spec.seed);
    let confounded = spec.confounding == Confounding::Confounded;
    let block = match spec.case {
        Case::Case1 => p - 4,
        Case::Case2 => p,
    };
    let chol = ar_cholesky(block);

    let mut y = DVector::zeros(n);
    let mut a = DMatrix::zeros(n, p);
    let mut c = DMatrix::zeros(n, COVARIATE_DIM);
    let mut eps = DVector::zeros(n);
    let mut bern = DMatrix::zeros(n, 2);

    for i in 0..n {
        let c1 = rng.chi_squared_2();
        let c2 = rng.standard_normal();
        let c3 = (c1 + c2).abs();
        let c4 = (c1 * c3).sqrt();
        let ci = [c1, c2, c3, c4];
        for (k, v) in ci.iter().enumerate() {
            c[(i, k)] = *v;
        }

        let z = DVector::from_fn(block, |_, _| rng.standard_normal());
        let noise = &chol * z;
        let mu = if confounded {
            match spec.case {
                Case::Case1 => case1_block_means(&ci, p),
                Case::Case2 => case2_means(&ci, p),
            }
        } else {
            vec![0.0; block]
        };

        match spec.case {
            Case::Case2 => {
                for j in 0..p {
                    a[(i, j)] = mu[j] + noise[j];
                }
            }
            Case::Case1 => {
                // block order: A1, A2, A7..A12
                let cols: Vec<usize> = [0, 1].into_iter().chain(6..p).collect();
                for (k, &j) in cols.iter().enumerate() {
                    a[(i, j)] = mu[k] + noise[k];
                }
                let (a1, a2) = (a[(i, 0)], a[(i, 1)]);
                a[(i, 2)] = rng.normal((a1 + a2).abs(), a1.abs().sqrt());
                a[(i, 3)] = rng.normal((a1 + a2).abs().sqrt(), a2.abs().sqrt());
                let u5 = rng.uniform();
                let u6 = rng.uniform();
                bern[(i, 0)] = u5;
                bern[(i, 1)] = u6;
                let p5 = 1.0 / (1.0 + (-a2).exp());
                let p6 = standard_normal_cdf(a2);
                a[(i, 4)] = f64::from(u8::from(u5 < p5));
                a[(i, 5)] = f64::from(u8::from(u6 < p6));
            }
        }

        let e = rng.standard_normal();
        eps[i] = e;
        let row = a.row(i);
        let s1 = row.dot(&truth.beta_true.column(0).transpose());
        let s2 = row.dot(&truth.beta_true.column(1).transpose());
        let c_term = if spec.confounding == Confounding::None {
            0.0
        } else {
            ci.iter().sum()
        };
        y[i] = s1 * s1 + s2 * s2 + c_term + 0.5 * e;
    }

    Ok(Draws {
        data: Dataset::new(y, a, c)?,
        eps,
        bern,
    })
}

/// Generates a dataset and its ground truth; a pure function of `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, SimulationTruth)> {
    let draws = draw(spec)?;
    Ok((draws.data, SimulationTruth::for_dimension(spec.p)))
}

#[cfg(any(test, feature = "latent"))]
pub fn generate_with_latent(spec: &ScenarioSpec) -> Result<(Dataset, SimulationTruth, Latent)> {
    let draws = draw(spec)?;
    Ok((
        draws.data,
        SimulationTruth::for_dimension(spec.p),
        Latent {
            eps: draws.eps,
            bernoulli_uniforms: draws.bern,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(case: Case, p: usize, confounding: Confounding, n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            case,
            p,
            confounding,
            n,
            seed,
        }
    }

    fn corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn deterministic_given_seed() {
        for case in [Case::Case1, Case::Case2] {
            let s = spec(case, 12, Confounding::Confounded, 50, 99);
            let (d1, _) = generate(&s).unwrap();
            let (d2, _) = generate(&s).unwrap();
            assert_eq!(d1, d2);
            let (d3, _) = generate(&ScenarioSpec { seed: 100, ..s }).unwrap();
            assert_ne!(d1, d3);
        }
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(generate(&spec(Case::Case2, 7, Confounding::None, 10, 0)).is_err());
        assert!(generate(&spec(Case::Case2, 6, Confounding::None, 0, 0)).is_err());
    }

    #[test]
    fn unconfounded_treatment_uncorrelated_with_covariates() {
        let n = 100_000;
        let (data, _) = generate(&spec(Case::Case2, 6, Confounding::None, n, 3)).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        for j in 0..6 {
            let aj: Vec<f64> = data.a.column(j).iter().copied().collect();
            for k in 0..4 {
                let ck: Vec<f64> = data.c.column(k).iter().copied().collect();
                assert!(corr(&aj, &ck).abs() < tol, "a{j} c{k}");
            }
        }
    }

    #[test]
    fn truth_columns_unit_norm_and_padded() {
        for p in [6, 12] {
            let t = SimulationTruth::for_dimension(p);
            for k in 0..2 {
                assert_relative_eq!(t.beta_true.column(k).norm(), 1.0, epsilon = 1e-12);
            }
            for i in 6..p {
                assert_eq!(t.beta_true.row(i).norm(), 0.0);
            }
        }
    }

    #[test]
    fn projection_targets() {
        let p6 = true_projection_targets(&SimulationTruth::for_dimension(6));
        assert_relative_eq!(p6.trace(), 2.0, epsilon = 1e-12);
        assert!((&p6 * &p6 - &p6).abs().max() < 1e-12);
        let p12 = true_projection_targets(&SimulationTruth::for_dimension(12));
        assert_eq!(p12.view((6, 6), (6, 6)).abs().max(), 0.0);
    }

    #[test]
    fn outcome_reconstructs_from_latent() {
        for (case, conf) in [
            (Case::Case1, Confounding::Confounded),
            (Case::Case2, Confounding::NoiseOnly),
            (Case::Case2, Confounding::None),
        ] {
            let (data, truth, latent) = generate_with_latent(&spec(case, 12, conf, 200, 5)).unwrap();
            let proj = &data.a * &truth.beta_true;
            for i in 0..data.n() {
                let signal = proj[(i, 0)].powi(2) + proj[(i, 1)].powi(2);
                let c_sum: f64 = if conf == Confounding::None {
                    0.0
                } else {
                    data.c.row(i).sum()
                };
                let resid = data.y[i] - c_sum - 0.5 * latent.eps[i];
                assert_relative_eq!(resid, signal, epsilon = 1e-9, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn case1_bernoulli_follows_logistic_link() {
        let n = 100_000;
        let (data, _, latent) =
            generate_with_latent(&spec(Case::Case1, 6, Confounding::Confounded, n, 21)).unwrap();
        // bins of A2
        let edges = [-10.0, -1.0, 0.0, 1.0, 2.0, 50.0];
        for w in edges.windows(2) {
            let idx: Vec<usize> = (0..n)
                .filter(|&i| data.a[(i, 1)] >= w[0] && data.a[(i, 1)] < w[1])
                .collect();
            if idx.len() < 500 {
                continue;
            }
            let m = idx.len() as f64;
            let freq = idx.iter().map(|&i| data.a[(i, 4)]).sum::<f64>() / m;
            let expect = idx
                .iter()
                .map(|&i| 1.0 / (1.0 + (-data.a[(i, 1)]).exp()))
                .sum::<f64>()
                / m;
            let se = (expect * (1.0 - expect) / m).sqrt();
            assert!((freq - expect).abs() < 4.0 * se + 1e-12, "bin {w:?}");
        }
        assert!(latent.bernoulli_uniforms.iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn case1_a3_variance_tracks_a1() {
        let n = 100_000;
        let (data, _) = generate(&spec(Case::Case1, 6, Confounding::NoiseOnly, n, 8)).unwrap();
        // residual of A3 about |A1+A2| has conditional variance |A1|
        let bins = [(0.2, 0.6), (0.8, 1.2), (1.5, 2.5)];
        for (lo, hi) in bins {
            let r: Vec<(f64, f64)> = (0..n)
                .filter(|&i| data.a[(i, 0)].abs() >= lo && data.a[(i, 0)].abs() < hi)
                .map(|i| {
                    let res = data.a[(i, 2)] - (data.a[(i, 0)] + data.a[(i, 1)]).abs();
                    (res * res, data.a[(i, 0)].abs())
                })
                .collect();
            let m = r.len() as f64;
            let mean_sq = r.iter().map(|x| x.0).sum::<f64>() / m;
            let mean_abs = r.iter().map(|x| x.1).sum::<f64>() / m;
            assert!((mean_sq - mean_abs).abs() < 0.05 * mean_abs + 0.02, "bin {lo}-{hi}");
        }
    }

    #[test]
    fn panel_labels_round_trip() {
        let p: Panel = "case2-p6".parse().unwrap();
        assert_eq!(p, Panel::new(Case::Case2, 6).unwrap());
        assert_eq!(p.to_string(), "case2-p6");
        assert!("case3-p6".parse::<Panel>().is_err());
        assert!("case1-p7".parse::<Panel>().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (data, _) = generate(&spec(Case::Case1, 6, Confounding::Confounded, 25, 1)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,a1,a2,a3,a4,a5,a6,c1,c2,c3,c4\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }
}
