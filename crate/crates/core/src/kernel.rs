//! Epanechnikov Nadaraya-Watson smoothing over projected treatments.
//!
//! Every conditional expectation indexed by the reduced treatment `Aᵀβ` goes
//! through this module. Multivariate projections use a product kernel with a
//! common bandwidth in every coordinate. Vector-valued regressands share one
//! weight set.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule-of-thumb constant for the Epanechnikov kernel.
pub const EPANECHNIKOV_SCALE: f64 = 2.34;
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-8;

/// Resolved kernel parameters for one regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub denom_floor: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64, denom_floor: f64) -> Result<Self> {
        let cfg = Self {
            bandwidth,
            denom_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.denom_floor >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "denom_floor must be nonnegative, got {}",
                self.denom_floor
            )));
        }
        Ok(())
    }
}

/// How bandwidths are chosen when smoothing inside the estimating equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Fixed bandwidth; when absent the rule of thumb is applied to the projections.
    pub bandwidth: Option<f64>,
    /// Multiplier `c` in `h = c·σ̂·n^(-1/(d+4))`.
    pub bandwidth_scale: f64,
    pub denom_floor: f64,
    /// Weight kernel sums by the IPW weights so smoothers target the
    /// reference-density expectations instead of the observed ones.
    pub reweight: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            bandwidth_scale: EPANECHNIKOV_SCALE,
            denom_floor: DEFAULT_DENOM_FLOOR,
            reweight: false,
        }
    }
}

impl SmoothingConfig {
    pub fn resolve(&self, projections: &DMatrix<f64>) -> Result<KernelConfig> {
        let h = match self.bandwidth {
            Some(h) => h,
            None => rule_of_thumb_bandwidth(projections, self.bandwidth_scale),
        };
        KernelConfig::new(h, self.denom_floor)
    }
}

/// `K(u) = 0.75 (1 - u²)` on `|u| ≤ 1`, zero elsewhere.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// `∏_j K(u_j / h) / h`.
pub fn product_kernel(u: &[f64], cfg: &KernelConfig) -> f64 {
    let h = cfg.bandwidth;
    let mut k = 1.0;
    for &uj in u {
        let kj = epanechnikov(uj / h);
        if kj == 0.0 {
            return 0.0;
        }
        k *= kj / h;
    }
    k
}

/// `h = scale · σ̂ · n^(-1/(d+4))`, with `σ̂` the mean per-coordinate
/// standard deviation of the `n × d` projections.
pub fn rule_of_thumb_bandwidth(projections: &DMatrix<f64>, scale: f64) -> f64 {
    let (n, d) = projections.shape();
    if n < 2 || d == 0 {
        return scale;
    }
    let sigma = (0..d)
        .map(|j| {
            let col = projections.column(j);
            let mean = col.mean();
            (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .sum::<f64>()
        / d as f64;
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    scale * sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// One observation for [`kernel_regress`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSample {
    pub projection: Vec<f64>,
    pub value: Vec<f64>,
}

/// A smoothed value; `trimmed` is set when the kernel denominator fell below
/// the floor and the global mean was returned instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub value: Vec<f64>,
    pub trimmed: bool,
}

/// Nadaraya-Watson estimate at `query` from a list of samples.
pub fn kernel_regress(
    samples: &[ProjectedSample],
    query: &[f64],
    cfg: &KernelConfig,
) -> Result<KernelEstimate> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::EmptySampleSet)?;
    let d = first.projection.len();
    let k = first.value.len();
    if query.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "query has length {}, projections have length {d}",
            query.len()
        )));
    }
    if samples
        .iter()
        .any(|s| s.projection.len() != d || s.value.len() != k)
    {
        return Err(Error::DimensionMismatch(
            "samples disagree in projection or value length".into(),
        ));
    }

    let mut num = vec![0.0; k];
    let mut den = 0.0;
    let mut diff = vec![0.0; d];
    for s in samples {
        for (dj, (q, x)) in diff.iter_mut().zip(query.iter().zip(&s.projection)) {
            *dj = q - x;
        }
        let w = product_kernel(&diff, cfg);
        if w > 0.0 {
            den += w;
            for (acc, v) in num.iter_mut().zip(&s.value) {
                *acc += w * v;
            }
        }
    }
    if den < cfg.denom_floor || den == 0.0 {
        let n = samples.len() as f64;
        let mut mean = vec![0.0; k];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(&s.value) {
                *m += v / n;
            }
        }
        return Ok(KernelEstimate {
            value: mean,
            trimmed: true,
        });
    }
    Ok(KernelEstimate {
        value: num.into_iter().map(|x| x / den).collect(),
        trimmed: false,
    })
}

/// Batch smoother over a fixed set of `n × d` projections.
///
/// Values are passed as `n × k` matrices; each column is smoothed with the
/// same kernel weights.
#[derive(Debug, Clone)]
pub struct Smoother {
    n: usize,
    d: usize,
    /// Row-major copy of the projections.
    points: Vec<f64>,
    sample_weights: Option<Vec<f64>>,
    cfg: KernelConfig,
}

/// Smoothed values at every sample, plus the number of trimmed queries.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub fitted: DMatrix<f64>,
    pub trimmed: usize,
}

impl Smoother {
    pub fn new(
        projections: &DMatrix<f64>,
        cfg: KernelConfig,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (n, d) = projections.shape();
        if n == 0 {
            return Err(Error::EmptySampleSet);
        }
        if let Some(w) = sample_weights {
            if w.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} sample weights for {n} samples",
                    w.len()
                )));
            }
        }
        let mut points = Vec::with_capacity(n * d);
        for i in 0..n {
            points.extend(projections.row(i).iter());
        }
        Ok(Self {
            n,
            d,
            points,
            sample_weights: sample_weights.map(<[f64]>::to_vec),
            cfg,
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    fn weight(&self, query: &[f64], j: usize) -> f64 {
        let h = self.cfg.bandwidth;
        let mut k = 1.0;
        for (q, x) in query.iter().zip(self.point(j)) {
            let kj = epanechnikov((q - x) / h);
            if kj == 0.0 {
                return 0.0;
            }
            k *= kj / h;
        }
        match &self.sample_weights {
            Some(sw) => k * sw[j],
            None => k,
        }
    }

    fn global_mean(&self, values: &DMatrix<f64>) -> Vec<f64> {
        let k = values.ncols();
        let mut acc = vec![0.0; k];
        let mut total = 0.0;
        for j in 0..self.n {
            let w = self.sample_weights.as_ref().map_or(1.0, |sw| sw[j]);
            total += w;
            for (c, a) in acc.iter_mut().enumerate() {
                *a += w * values[(j, c)];
            }
        }
        acc.into_iter().map(|a| a / total).collect()
    }

    /// Estimate at `query`, optionally leaving out sample `exclude`.
    fn estimate(
        &self,
        query: &[f64],
        values: &DMatrix<f64>,
        exclude: Option<usize>,
        fallback: &[f64],
    ) -> (Vec<f64>, bool) {
        let k = values.ncols();
        let mut num = vec![0.0; k];
        let mut den = 0.0;
        for j in 0..self.n {
            if Some(j) == exclude {
                continue;
            }
            let w = self.weight(query, j);
            if w != 0.0 {
                den += w;
                for (c, acc) in num.iter_mut().enumerate() {
                    *acc += w * values[(j, c)];
                }
            }
        }
        if den < self.cfg.denom_floor || den <= 0.0 {
            (fallback.to_vec(), true)
        } else {
            (num.into_iter().map(|x| x / den).collect(), false)
        }
    }

    fn check_values(&self, values: &DMatrix<f64>) -> Result<()> {
        if values.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} value rows for {} samples",
                values.nrows(),
                self.n
            )));
        }
        Ok(())
    }

    /// Leave-one-out estimates at every sample's own projection.
    pub fn leave_one_out(&self, values: &DMatrix<f64>) -> Result<SmoothFit> {
        self.check_values(values)?;
        let fallback = self.global_mean(values);
        let rows: Vec<(Vec<f64>, bool)> = (0..self.n)
            .into_par_iter()
            .map(|i| self.estimate(self.point(i), values, Some(i), &fallback))
            .collect();
        Ok(Self::assemble(rows, values.ncols()))
    }

    /// Full-sample estimates at arbitrary `m × d` query points.
    pub fn predict(&self, queries: &DMatrix<f64>, values: &DMatrix<f64>) -> Result<SmoothFit> {
        self.check_values(values)?;
        if queries.ncols() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "queries have {} columns, projections have {}",
                queries.ncols(),
                self.d
            )));
        }
        let fallback = self.global_mean(values);
        let rows: Vec<(Vec<f64>, bool)> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| {
                let q: Vec<f64> = queries.row(i).iter().copied().collect();
                self.estimate(&q, values, None, &fallback)
            })
            .collect();
        Ok(Self::assemble(rows, values.ncols()))
    }

    fn assemble(rows: Vec<(Vec<f64>, bool)>, k: usize) -> SmoothFit {
        let m = rows.len();
        let mut fitted = DMatrix::zeros(m, k);
        let mut trimmed = 0;
        for (i, (row, t)) in rows.into_iter().enumerate() {
            trimmed += usize::from(t);
            for (c, v) in row.into_iter().enumerate() {
                fitted[(i, c)] = v;
            }
        }
        SmoothFit { fitted, trimmed }
    }
}
