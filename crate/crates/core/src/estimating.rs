//! Empirical estimating functions for the reduction β.
//!
//! Each sample contributes `{Y − Ê(Y | Aᵀβ)} · vec({α(A) − Ê(α | Aᵀβ)} ⊗ w(Aᵀβ))`,
//! where `w(u) = u − ū` is the centered projection. With `α` returning the
//! `p − d` free treatment coordinates this gives exactly one moment per free
//! entry of the canonical basis, entry `(j, k)` pairing `α_j` with `w_k`.
//! All smoothers are leave-one-out.
//!
//! * regression: plain sample mean of the per-sample terms;
//! * IPW: terms weighted by `g*(A)/p(A | C)`;
//! * augmented: IPW minus `W·E[U | A, C] − E_q[E[U | A, C] | C]` (or plus it,
//!   under [`AugmentationSign::Displayed`]), with
//!   `E[U | A, C] = f̃(A, C, β)·vec({α − Ê(α | Aᵀβ)} ⊗ w)` and the last term
//!   averaged over frozen draws from `g*`.

use nalgebra::{DMatrix, DVector};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::kernel::{SmoothingConfig, Smoother};
use crate::nuisance::{
    AlphaConditional, Alpha, AugmentationForm, AugmentationSign, FTildeModel, GaussianConditional, IpwWeights, NuisanceSpec,
    QDraws, ReferenceDensity, TreatmentModel,
};
use crate::rng::RngStream;
use crate::simulation::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MomentDiagnostics {
    /// Kernel queries whose denominator fell below the floor.
    pub trimmed_queries: usize,
    pub truncated_weights: usize,
}

impl std::ops::AddAssign for MomentDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.trimmed_queries += rhs.trimmed_queries;
        self.truncated_weights += rhs.truncated_weights;
    }
}

/// A stacked estimating-function value, one entry per free basis parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValue {
    pub vector: DVector<f64>,
    pub diagnostics: MomentDiagnostics,
}

impl MomentValue {
    pub fn norm(&self) -> f64 {
        self.vector.norm()
    }
}

/// Mean-zero pieces of the augmented estimating function.
#[derive(Debug, Clone)]
pub struct AugmentedParts {
    /// `mean(W·U)`.
    pub ipw: DVector<f64>,
    /// `mean(W·E[U | A, C])` (unweighted under [`AugmentationForm::UnweightedSecond`]).
    pub second: DVector<f64>,
    /// `mean(E_q[E[U | A, C] | C])`.
    pub third: DVector<f64>,
    pub sign: AugmentationSign,
    pub diagnostics: MomentDiagnostics,
}

impl AugmentedParts {
    pub fn total(&self) -> DVector<f64> {
        match self.sign {
            AugmentationSign::Projected => &self.ipw - &self.second + &self.third,
            AugmentationSign::Displayed => &self.ipw + &self.second - &self.third,
        }
    }
}

/// `f̃` evaluated where the augmented terms need it.
#[derive(Debug, Clone)]
pub struct FTildeTable {
    /// `f̃(A_i, C_i)`.
    pub observed: DVector<f64>,
    /// `f̃(a_k, C_i)` for reference draw `k`, `n × m`; no columns when `f̃ ≡ 0`.
    pub at_draws: DMatrix<f64>,
    d: usize,
    reusable: bool,
}

struct Residuals {
    y: DVector<f64>,
    alpha: DMatrix<f64>,
    /// Centered projections `u − ū`.
    index: DMatrix<f64>,
    mean_projection: DVector<f64>,
    smoother: Smoother,
    alpha_fit: AlphaFit,
    alpha_fn: Alpha,
    trimmed: usize,
}

enum AlphaFit {
    /// Centered `α(A_i)` values smoothed on demand.
    Kernel { values: DMatrix<f64>, mean: DVector<f64> },
    /// Identity α: the free rows of `E_q[A | u]`.
    Linear(GaussianConditional),
    /// Custom α: averaged over frozen conditional draws of `A` given `u`.
    Sampled {
        conditional: GaussianConditional,
        residuals: DMatrix<f64>,
    },
}

impl Residuals {
    /// `Ê[α | u]` at arbitrary projections, plus the number of trimmed queries.
    fn alpha_at(&self, proj: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
        match &self.alpha_fit {
            AlphaFit::Kernel { values, mean } => {
                let mut fit = self.smoother.predict(proj, values)?;
                for mut row in fit.fitted.row_iter_mut() {
                    row += mean.transpose();
                }
                Ok((fit.fitted, fit.trimmed))
            }
            AlphaFit::Linear(cond) => {
                let d = proj.ncols();
                let full = cond.mean_at(proj);
                Ok((full.columns(d, full.ncols() - d).into_owned(), 0))
            }
            AlphaFit::Sampled { conditional, residuals } => {
                let centers = conditional.mean_at(proj);
                let m = residuals.nrows();
                let d = proj.ncols();
                let mut out = DMatrix::zeros(proj.nrows(), centers.ncols() - d);
                let mut row = vec![0.0; centers.ncols()];
                for i in 0..proj.nrows() {
                    for k in 0..m {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = centers[(i, j)] + residuals[(k, j)];
                        }
                        let value = self.alpha_fn.eval(&row, d);
                        for (j, v) in value.iter().enumerate() {
                            out[(i, j)] += v / m as f64;
                        }
                    }
                }
                Ok((out, 0))
            }
        }
    }
}

fn center_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = m.row_mean().transpose();
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    (out, mean)
}

/// `n × (r·d)` products `scale_i · res_ij · index_ik` at column `k·r + j`.
fn kron_rows(scale: &DVector<f64>, res: &DMatrix<f64>, index: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = res.shape();
    let d = index.ncols();
    DMatrix::from_fn(n, r * d, |i, col| {
        let (k, j) = (col / r, col % r);
        scale[i] * res[(i, j)] * index[(i, k)]
    })
}

fn weighted_column_mean(terms: &DMatrix<f64>, weights: Option<&[f64]>) -> DVector<f64> {
    let n = terms.nrows();
    let mut out = DVector::zeros(terms.ncols());
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        for c in 0..terms.ncols() {
            out[c] += w * terms[(i, c)];
        }
    }
    out / n as f64
}

/// Fixed stream for conditional draws, so a moment is a deterministic function of β.
const ALPHA_DRAW_SEED: u64 = 0x5eed_a1fa;

/// Data and frozen nuisance pieces shared by every evaluation within a solve.
#[derive(Debug)]
pub struct EstimatingProblem<'a> {
    data: &'a Dataset,
    spec: &'a NuisanceSpec,
    smoothing: SmoothingConfig,
    weights: Option<IpwWeights>,
    reference: Option<ReferenceDensity>,
    draws: Option<QDraws>,
    /// Standard normals for conditional draws when a custom α uses the reference law.
    alpha_normals: Option<DMatrix<f64>>,
}

impl<'a> EstimatingProblem<'a> {
    pub fn regression(data: &'a Dataset, spec: &'a NuisanceSpec, smoothing: SmoothingConfig) -> Result<Self> {
        spec.validate()?;
        let reference = match spec.alpha_conditional {
            AlphaConditional::Reference => Some(spec.reference_for(data)?),
            AlphaConditional::Kernel => None,
        };
        let alpha_normals = match (spec.alpha_conditional, &spec.alpha) {
            (AlphaConditional::Reference, Alpha::Custom(_)) => {
                let mut rng = RngStream::new(ALPHA_DRAW_SEED);
                Some(DMatrix::from_fn(spec.mc_draws, data.p(), |_, _| rng.standard_normal()))
            }
            _ => None,
        };
        Ok(Self {
            data,
            spec,
            smoothing,
            weights: None,
            reference,
            draws: None,
            alpha_normals,
        })
    }

    pub fn ipw(
        data: &'a Dataset,
        model: &TreatmentModel,
        spec: &'a NuisanceSpec,
        smoothing: SmoothingConfig,
    ) -> Result<Self> {
        let mut problem = Self::regression(data, spec, smoothing)?;
        let reference = spec.reference_for(data)?;
        problem.weights = Some(IpwWeights::compute(data, model, &reference, spec.weight_cap)?);
        problem.reference = Some(reference);
        Ok(problem)
    }

    /// Like [`Self::ipw`], and draws the reference-density sample once from `rng`.
    pub fn augmented(
        data: &'a Dataset,
        model: &TreatmentModel,
        spec: &'a NuisanceSpec,
        smoothing: SmoothingConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut problem = Self::ipw(data, model, spec, smoothing)?;
        let reference = problem.reference.as_ref().expect("set by ipw");
        problem.draws = Some(QDraws::sample(reference, spec.mc_draws, rng)?);
        Ok(problem)
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn spec(&self) -> &NuisanceSpec {
        self.spec
    }

    pub fn smoothing(&self) -> &SmoothingConfig {
        &self.smoothing
    }

    pub fn weights(&self) -> Option<&IpwWeights> {
        self.weights.as_ref()
    }

    fn kernel_weights(&self) -> Option<&[f64]> {
        if self.smoothing.reweight {
            self.weights.as_ref().map(|w| w.weights.as_slice())
        } else {
            None
        }
    }

    fn truncated(&self) -> usize {
        self.weights.as_ref().map_or(0, |w| w.truncated)
    }

    fn alpha_matrix(&self, a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
        let (m, p) = a.shape();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let row: Vec<f64> = a.row(i).iter().copied().collect();
                self.spec.alpha.eval(&row, d)
            })
            .collect();
        let r = p - d;
        if rows.iter().any(|row| row.len() != r) {
            return Err(Error::DimensionMismatch(format!(
                "α(A) must have p − d = {r} components for a determined system"
            )));
        }
        Ok(DMatrix::from_fn(m, r, |i, j| rows[i][j]))
    }

    fn residuals(&self, basis: &Basis, kernel_weights: Option<&[f64]>) -> Result<Residuals> {
        let data = self.data;
        if basis.p() != data.p() {
            return Err(Error::DimensionMismatch(format!(
                "basis has p = {}, data has p = {}",
                basis.p(),
                data.p()
            )));
        }
        let d = basis.d();
        let proj = &data.a * basis.matrix();
        let kcfg = self.smoothing.resolve(&proj)?;
        let alpha = self.alpha_matrix(&data.a, d)?;
        let r = alpha.ncols();
        let n = data.n();

        // centering makes a constant column smooth to exactly zero
        let (y_centered, _) = center_columns(&DMatrix::from_column_slice(n, 1, data.y.as_slice()));
        let smoother = Smoother::new(&proj, kcfg, kernel_weights)?;
        let (alpha_resid, alpha_fit, trimmed) = match self.spec.alpha_conditional {
            AlphaConditional::Kernel => {
                let (alpha_centered, alpha_mean) = center_columns(&alpha);
                let mut values = DMatrix::zeros(n, 1 + r);
                values.set_column(0, &y_centered.column(0));
                values.columns_mut(1, r).copy_from(&alpha_centered);
                let fit = smoother.leave_one_out(&values)?;
                let resid = values - fit.fitted;
                (
                    resid.columns(0, 1 + r).into_owned(),
                    AlphaFit::Kernel {
                        values: alpha_centered,
                        mean: alpha_mean,
                    },
                    fit.trimmed,
                )
            }
            AlphaConditional::Reference => {
                let reference = self
                    .reference
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("reference density unavailable".into()))?;
                let conditional = reference.conditional_on_projection(basis)?;
                let alpha_fit = match &self.alpha_normals {
                    Some(normals) => AlphaFit::Sampled {
                        residuals: conditional.residuals(normals),
                        conditional,
                    },
                    None => AlphaFit::Linear(conditional),
                };
                let fit = smoother.leave_one_out(&y_centered)?;
                let mut resid = DMatrix::zeros(n, 1 + r);
                resid.set_column(0, &(&y_centered - &fit.fitted).column(0));
                (resid, alpha_fit, fit.trimmed)
            }
        };

        let mean_projection = proj.row_mean().transpose();
        let mut index = proj;
        for mut row in index.row_iter_mut() {
            row -= mean_projection.transpose();
        }
        let kernel_mode = matches!(alpha_fit, AlphaFit::Kernel { .. });
        let mut res = Residuals {
            y: alpha_resid.column(0).into_owned(),
            alpha: alpha_resid.columns(1, r).into_owned(),
            index,
            mean_projection,
            smoother,
            alpha_fit,
            alpha_fn: self.spec.alpha.clone(),
            trimmed,
        };
        if !kernel_mode {
            let proj = &data.a * basis.matrix();
            let (fitted, _) = res.alpha_at(&proj)?;
            res.alpha = alpha - fitted;
        }
        Ok(res)
    }

    fn check_finite(v: DVector<f64>) -> Result<DVector<f64>> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteEntry("moment vector".into()))
        }
    }

    /// Regression estimating function.
    pub fn u_regression(&self, basis: &Basis) -> Result<MomentValue> {
        let res = self.residuals(basis, None)?;
        let terms = kron_rows(&res.y, &res.alpha, &res.index);
        Ok(MomentValue {
            vector: Self::check_finite(weighted_column_mean(&terms, None))?,
            diagnostics: MomentDiagnostics {
                trimmed_queries: res.trimmed,
                truncated_weights: 0,
            },
        })
    }

    fn require_weights(&self) -> Result<&IpwWeights> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("problem was built without a treatment model".into()))
    }

    /// Inverse-probability-weighted estimating function.
    pub fn u_ipw(&self, basis: &Basis) -> Result<MomentValue> {
        let w = self.require_weights()?;
        let res = self.residuals(basis, self.kernel_weights())?;
        let terms = kron_rows(&res.y, &res.alpha, &res.index);
        Ok(MomentValue {
            vector: Self::check_finite(weighted_column_mean(&terms, Some(&w.weights)))?,
            diagnostics: MomentDiagnostics {
                trimmed_queries: res.trimmed,
                truncated_weights: w.truncated,
            },
        })
    }

    /// Evaluates `f̃` at the observed samples and at every (draw, covariate)
    /// pair. For maps that ignore β the result can be reused across bases of
    /// the same dimension.
    pub fn ftilde_table(&self, basis: &Basis, ftilde: &FTildeModel) -> Result<FTildeTable> {
        let data = self.data;
        let n = data.n();
        if ftilde.psi.is_empty() {
            return Ok(FTildeTable {
                observed: DVector::zeros(n),
                at_draws: DMatrix::zeros(n, 0),
                d: basis.d(),
                reusable: true,
            });
        }
        let draws = self.require_draws()?;
        let rows_c: Vec<Vec<f64>> = (0..n).map(|i| data.c.row(i).iter().copied().collect()).collect();
        let observed = DVector::from_fn(n, |i, _| {
            let a: Vec<f64> = data.a.row(i).iter().copied().collect();
            ftilde.eval(&a, &rows_c[i], basis)
        });
        let m = draws.len();
        let draw_rows: Vec<Vec<f64>> = (0..m).map(|k| draws.draws.row(k).iter().copied().collect()).collect();
        let at_draws = DMatrix::from_fn(n, m, |i, k| ftilde.eval(&draw_rows[k], &rows_c[i], basis));
        Ok(FTildeTable {
            observed,
            at_draws,
            d: basis.d(),
            reusable: !ftilde.features.depends_on_basis(),
        })
    }

    fn require_draws(&self) -> Result<&QDraws> {
        self.draws
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("problem was built without reference draws".into()))
    }

    /// The three pieces of the augmented estimating function.
    pub fn augmented_parts(&self, basis: &Basis, ftilde: &FTildeModel) -> Result<AugmentedParts> {
        let table = self.ftilde_table(basis, ftilde)?;
        self.augmented_parts_with(basis, &table)
    }

    /// As [`Self::augmented_parts`], with `f̃` already tabulated. A table built
    /// at another basis is only accepted when it is reusable.
    pub fn augmented_parts_with(&self, basis: &Basis, table: &FTildeTable) -> Result<AugmentedParts> {
        let w = self.require_weights()?;
        let draws = self.require_draws()?;
        if table.d != basis.d() || table.observed.len() != self.data.n() {
            return Err(Error::DimensionMismatch("f̃ table was built for another problem".into()));
        }
        let res = self.residuals(basis, self.kernel_weights())?;
        let rd = res.alpha.ncols() * basis.d();

        let ipw_terms = kron_rows(&res.y, &res.alpha, &res.index);
        let ipw = weighted_column_mean(&ipw_terms, Some(&w.weights));
        let mut trimmed = res.trimmed;

        let (second, third) = if table.at_draws.ncols() == 0 {
            (DVector::zeros(rd), DVector::zeros(rd))
        } else {
            let cond_terms = kron_rows(&table.observed, &res.alpha, &res.index);
            let second = match self.spec.augmentation {
                AugmentationForm::Weighted => weighted_column_mean(&cond_terms, Some(&w.weights)),
                AugmentationForm::UnweightedSecond => weighted_column_mean(&cond_terms, None),
            };

            // E_q[E[U | A, C] | C_i] over the frozen draws
            let m = draws.len();
            let q_proj = &draws.draws * basis.matrix();
            let q_alpha = self.alpha_matrix(&draws.draws, basis.d())?;
            let (q_fitted, q_trimmed) = res.alpha_at(&q_proj)?;
            trimmed += q_trimmed;
            let q_res = q_alpha - q_fitted;
            let mut q_index = q_proj;
            for mut row in q_index.row_iter_mut() {
                row -= res.mean_projection.transpose();
            }
            let g = kron_rows(&DVector::from_element(m, 1.0), &q_res, &q_index);
            let per_sample = &table.at_draws * g / m as f64;
            (second, weighted_column_mean(&per_sample, None))
        };

        Ok(AugmentedParts {
            ipw: Self::check_finite(ipw)?,
            second: Self::check_finite(second)?,
            third: Self::check_finite(third)?,
            sign: self.spec.augmentation_sign,
            diagnostics: MomentDiagnostics {
                trimmed_queries: trimmed,
                truncated_weights: self.truncated(),
            },
        })
    }

    /// Augmented estimating function from a reusable table; falls back to
    /// tabulating at `basis` when the table depends on β.
    pub fn u_augmented_with(&self, basis: &Basis, ftilde: &FTildeModel, table: &FTildeTable) -> Result<MomentValue> {
        let parts = if table.reusable {
            self.augmented_parts_with(basis, table)?
        } else {
            self.augmented_parts(basis, ftilde)?
        };
        Ok(MomentValue {
            vector: parts.total(),
            diagnostics: parts.diagnostics,
        })
    }

    /// Augmented (optimal-φ) estimating function for a fixed `f̃`.
    pub fn u_augmented(&self, basis: &Basis, ftilde: &FTildeModel) -> Result<MomentValue> {
        let parts = self.augmented_parts(basis, ftilde)?;
        Ok(MomentValue {
            vector: parts.total(),
            diagnostics: parts.diagnostics,
        })
    }
}

pub fn u_regression(
    data: &Dataset,
    beta: &Basis,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
) -> Result<MomentValue> {
    EstimatingProblem::regression(data, spec, *smoothing)?.u_regression(beta)
}

pub fn u_ipw(
    data: &Dataset,
    beta: &Basis,
    model: &TreatmentModel,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
) -> Result<MomentValue> {
    EstimatingProblem::ipw(data, model, spec, *smoothing)?.u_ipw(beta)
}

pub fn u_augmented(
    data: &Dataset,
    beta: &Basis,
    model: &TreatmentModel,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
    ftilde: &FTildeModel,
    rng: &mut RngStream,
) -> Result<MomentValue> {
    EstimatingProblem::augmented(data, model, spec, *smoothing, rng)?.u_augmented(beta, ftilde)
}
