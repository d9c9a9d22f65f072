//! Nuisance models: the treatment density `p(A | C)`, the reference density
//! `g*`, the user functions `α(A)` and `d(A, C)`, the parametric `f̃` model,
//! and Monte Carlo expectations under the reference density.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::kernel::{SmoothingConfig, Smoother};
use crate::rng::RngStream;
use crate::simulation::Dataset;

const RIDGE_FACTOR: f64 = 1e-6;
const SINGULAR_TOL: f64 = 1e-10;

/// Conditional density family for `A | C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreatmentFamily {
    /// `A | C ~ N(B·[1, C], Σ)`.
    LinearGaussian,
}

/// A multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
struct Gaussian {
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let p = cov.nrows();
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(Self {
            chol_l: l,
            log_norm: -0.5 * (p as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_density(&self, centered: &DVector<f64>) -> f64 {
        let z = self
            .chol_l
            .solve_lower_triangular(centered)
            .expect("cholesky factor has positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Fitted conditional density `p(A | C)`.
#[derive(Debug, Clone)]
pub struct TreatmentModel {
    /// `p × (1 + q)`; column 0 is the intercept.
    pub coefficients: DMatrix<f64>,
    /// Residual covariance (ridge included when one was needed).
    pub covariance: DMatrix<f64>,
    pub family: TreatmentFamily,
    /// Ridge added to the diagonal of the residual covariance, zero if none.
    pub ridge: f64,
    gaussian: Gaussian,
}

impl TreatmentModel {
    /// A linear-Gaussian model with known parameters.
    pub fn new(coefficients: DMatrix<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = coefficients.nrows();
        if coefficients.ncols() == 0 || covariance.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "coefficients {:?} and covariance {:?}",
                coefficients.shape(),
                covariance.shape()
            )));
        }
        let gaussian = Gaussian::new(&covariance).ok_or(Error::DegenerateCovariance)?;
        Ok(Self {
            coefficients,
            covariance,
            family: TreatmentFamily::LinearGaussian,
            ridge: 0.0,
            gaussian,
        })
    }

    pub fn p(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn mean(&self, c: &[f64]) -> DVector<f64> {
        let x = DVector::from_iterator(c.len() + 1, std::iter::once(1.0).chain(c.iter().copied()));
        &self.coefficients * x
    }

    pub fn log_density(&self, a: &[f64], c: &[f64]) -> f64 {
        let centered = DVector::from_column_slice(a) - self.mean(c);
        self.gaussian.log_density(&centered)
    }

    pub fn density(&self, a: &[f64], c: &[f64]) -> f64 {
        self.log_density(a, c).exp()
    }
}

/// Least-squares coefficients of `a` on `[1, c]`, returned as `p × (1 + q)`.
pub fn least_squares_coefficients(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, q) = c.shape();
    if n <= q + 1 {
        return Err(Error::InsufficientSamples { n, p: q + 1 });
    }
    let mut x = DMatrix::from_element(n, q + 1, 1.0);
    x.columns_mut(1, q).copy_from(c);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= SINGULAR_TOL * smax {
        return Err(Error::SingularDesign);
    }
    let coef = svd
        .solve(a, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    Ok(coef.transpose())
}

fn is_well_conditioned(cov: &DMatrix<f64>, scale: f64) -> bool {
    let eig = cov.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    hi > 0.0 && lo > SINGULAR_TOL * hi && lo > 1e-12 * scale
}

/// Maximum-likelihood linear-Gaussian fit of `A | C`; fitted once per dataset.
pub fn fit_treatment_model(data: &Dataset) -> Result<TreatmentModel> {
    let (n, p) = (data.n(), data.p());
    let coefficients = least_squares_coefficients(&data.c, &data.a)?;
    let mut x = DMatrix::from_element(n, data.q() + 1, 1.0);
    x.columns_mut(1, data.q()).copy_from(&data.c);
    let resid = &data.a - &x * coefficients.transpose();
    let mut covariance = resid.transpose() * &resid / n as f64;
    covariance = (&covariance + covariance.transpose()) * 0.5;

    let a_scale = sample_covariance(&data.a).trace() / p as f64;
    let mut ridge = 0.0;
    if !is_well_conditioned(&covariance, a_scale) {
        ridge = RIDGE_FACTOR * covariance.trace() / p as f64;
        for i in 0..p {
            covariance[(i, i)] += ridge;
        }
        if !is_well_conditioned(&covariance, a_scale) {
            return Err(Error::DegenerateCovariance);
        }
    }
    let gaussian = Gaussian::new(&covariance).ok_or(Error::DegenerateCovariance)?;
    Ok(TreatmentModel {
        coefficients,
        covariance,
        family: TreatmentFamily::LinearGaussian,
        ridge,
        gaussian,
    })
}

pub(crate) fn sample_covariance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let means = a.row_mean();
    let mut centered = a.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.transpose() * &centered / (n.max(2) - 1) as f64
}

/// The known reference density `g*(A)`, a multivariate normal.
#[derive(Debug, Clone)]
pub struct ReferenceDensity {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    gaussian: Gaussian,
}

impl ReferenceDensity {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch("reference mean/covariance".into()));
        }
        if (&covariance - covariance.transpose()).abs().max() > 1e-10 * covariance.abs().max() {
            return Err(Error::InvalidConfig("reference covariance is not symmetric".into()));
        }
        let gaussian = Gaussian::new(&covariance).ok_or(Error::DegenerateCovariance)?;
        Ok(Self {
            mean,
            covariance,
            gaussian,
        })
    }

    /// `N(sample mean of A, sample covariance of A)`.
    pub fn from_sample(a: &DMatrix<f64>) -> Result<Self> {
        let mean = a.row_mean().transpose();
        Self::new(mean, sample_covariance(a))
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, a: &[f64]) -> f64 {
        self.gaussian
            .log_density(&(DVector::from_column_slice(a) - &self.mean))
    }

    pub fn density(&self, a: &[f64]) -> f64 {
        self.log_density(a).exp()
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_fn(self.p(), |_, _| rng.standard_normal());
        &self.mean + &self.gaussian.chol_l * z
    }

    /// The law of `A` given `Aᵀβ` under this density.
    pub fn conditional_on_projection(&self, basis: &Basis) -> Result<GaussianConditional> {
        if basis.p() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "basis has p = {}, reference has p = {}",
                basis.p(),
                self.p()
            )));
        }
        let p = self.p();
        let b = basis.matrix();
        let cov_ab = &self.covariance * b;
        let cov_u = b.transpose() * &cov_ab;
        let inv = cov_u
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("projected reference covariance".into()))?;
        let slope = &cov_ab * inv;
        // (I − Σβ(βᵀΣβ)⁻¹βᵀ)L maps standard normals to draws of A − E[A | Aᵀβ]
        let residual_factor = (DMatrix::identity(p, p) - &slope * b.transpose()) * &self.gaussian.chol_l;
        Ok(GaussianConditional {
            mean: self.mean.clone(),
            center: b.transpose() * &self.mean,
            slope,
            residual_factor,
        })
    }
}

/// `A | Aᵀβ = u ~ N(mean + slope·(u − center), FFᵀ)` with `F = residual_factor`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub center: DVector<f64>,
    pub slope: DMatrix<f64>,
    pub residual_factor: DMatrix<f64>,
}

impl GaussianConditional {
    /// One row of `E[A | u]` per row of `proj`.
    pub fn mean_at(&self, proj: &DMatrix<f64>) -> DMatrix<f64> {
        let mut shifted = proj.clone();
        for mut row in shifted.row_iter_mut() {
            row -= self.center.transpose();
        }
        let mut out = shifted * self.slope.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    /// Maps rows of standard normals to rows of `A − E[A | u]`.
    pub fn residuals(&self, normals: &DMatrix<f64>) -> DMatrix<f64> {
        normals * self.residual_factor.transpose()
    }
}

/// Untruncated inverse probability weight `g*(a) / p(a | c)`.
pub fn ipw_weight(model: &TreatmentModel, reference: &ReferenceDensity, a: &[f64], c: &[f64]) -> f64 {
    (reference.log_density(a) - model.log_density(a, c)).exp()
}

/// Upper cap applied to in-sample IPW weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightCap {
    /// Cap at this quantile of the in-sample weights.
    Quantile(f64),
    Fixed(f64),
    None,
}

impl Default for WeightCap {
    fn default() -> Self {
        WeightCap::Quantile(0.99)
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Truncated in-sample weights.
#[derive(Debug, Clone)]
pub struct IpwWeights {
    pub weights: Vec<f64>,
    pub cap: f64,
    pub truncated: usize,
}

impl IpwWeights {
    pub fn compute(
        data: &Dataset,
        model: &TreatmentModel,
        reference: &ReferenceDensity,
        cap: WeightCap,
    ) -> Result<Self> {
        if model.p() != data.p() || reference.p() != data.p() {
            return Err(Error::DimensionMismatch(
                "treatment model, reference density and data disagree on p".into(),
            ));
        }
        let raw: Vec<f64> = (0..data.n())
            .map(|i| {
                let a: Vec<f64> = data.a.row(i).iter().copied().collect();
                let c: Vec<f64> = data.c.row(i).iter().copied().collect();
                ipw_weight(model, reference, &a, &c)
            })
            .collect();
        if raw.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteEntry("ipw weights".into()));
        }
        let cap = match cap {
            WeightCap::None => f64::INFINITY,
            WeightCap::Fixed(v) => v,
            WeightCap::Quantile(q) => {
                let mut sorted = raw.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                quantile_sorted(&sorted, q)
            }
        };
        let mut truncated = 0;
        let weights = raw
            .into_iter()
            .map(|w| {
                if w > cap {
                    truncated += 1;
                    cap
                } else {
                    w
                }
            })
            .collect();
        Ok(Self {
            weights,
            cap,
            truncated,
        })
    }
}

type AlphaFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type FeatureFn = dyn Fn(&[f64], &[f64], &Basis) -> Vec<f64> + Send + Sync;

/// The function `α(A)` paired with the outcome residual.
#[derive(Clone, Default)]
pub enum Alpha {
    /// The treatment coordinates whose loadings are free, `A_{d+1..p}`.
    #[default]
    Identity,
    /// Must return `p − d` components.
    Custom(Arc<AlphaFn>),
}

impl fmt::Debug for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Identity => f.write_str("Identity"),
            Alpha::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Alpha {
    pub fn eval(&self, a: &[f64], d: usize) -> Vec<f64> {
        match self {
            Alpha::Identity => a[d..].to_vec(),
            Alpha::Custom(f) => f(a),
        }
    }
}

/// Feature maps used for `f̃(A, C, β) = ψᵀ φ(A, C, β)` and for `d(A, C)`.
#[derive(Clone, Default)]
pub enum FeatureMap {
    /// `[C, A_{d+1..p}, A₁C₁, …, A_kC_k]`, `k = min(p, q, 4)`.
    #[default]
    Full,
    /// `Full` without the covariate main effects.
    NoCovariates,
    /// No features: `f̃ ≡ 0`.
    Empty,
    Custom(Arc<FeatureFn>),
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Full => f.write_str("Full"),
            FeatureMap::NoCovariates => f.write_str("NoCovariates"),
            FeatureMap::Empty => f.write_str("Empty"),
            FeatureMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl FeatureMap {
    pub fn eval(&self, a: &[f64], c: &[f64], basis: &Basis) -> Vec<f64> {
        let d = basis.d();
        let k = a.len().min(c.len()).min(4);
        let interactions = (0..k).map(|j| a[j] * c[j]);
        match self {
            FeatureMap::Full => c
                .iter()
                .copied()
                .chain(a[d..].iter().copied())
                .chain(interactions)
                .collect(),
            FeatureMap::NoCovariates => a[d..].iter().copied().chain(interactions).collect(),
            FeatureMap::Empty => Vec::new(),
            FeatureMap::Custom(f) => f(a, c, basis),
        }
    }

    /// Whether the map can change with β beyond its dimension `d`.
    pub fn depends_on_basis(&self) -> bool {
        matches!(self, FeatureMap::Custom(_))
    }

    /// Evaluates the map on every sample, `n × s`.
    pub fn matrix(&self, data: &Dataset, basis: &Basis) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = (0..data.n())
            .map(|i| {
                let a: Vec<f64> = data.a.row(i).iter().copied().collect();
                let c: Vec<f64> = data.c.row(i).iter().copied().collect();
                self.eval(&a, &c, basis)
            })
            .collect();
        let s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::DimensionMismatch("feature map length varies".into()));
        }
        Ok(DMatrix::from_fn(data.n(), s, |i, j| rows[i][j]))
    }
}

/// How the second augmentation term is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationForm {
    /// `E[g*U/p | A, C] = (g*/p)·E[U | A, C]`.
    #[default]
    Weighted,
    /// Second term taken as `E[U | A, C]` without the weight.
    UnweightedSecond,
}

/// Sign convention for the two augmentation terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationSign {
    /// `W·U − W·E[U | A, C] + E_q[E[U | A, C] | C]`, the projection of the
    /// weighted term onto the complement of the treatment-model scores.
    #[default]
    Projected,
    /// `W·U + W·E[U | A, C] − E_q[E[U | A, C] | C]`.
    Displayed,
}

/// How `E[α(A) | Aᵀβ]` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaConditional {
    /// Under the Gaussian reference density: closed form for [`Alpha::Identity`],
    /// frozen conditional draws otherwise.
    #[default]
    Reference,
    /// Leave-one-out kernel smoothing of `α(A_i)` on the observed projections.
    Kernel,
}

/// User choices that the estimating equations leave free.
#[derive(Debug, Clone)]
pub struct NuisanceSpec {
    pub alpha: Alpha,
    pub alpha_conditional: AlphaConditional,
    /// Instruments `d(A, C)` for fitting `f̃`; `None` reuses the `f̃` features.
    pub dfn: Option<FeatureMap>,
    /// `None` uses `N(sample mean, sample covariance)` of the treatments.
    pub reference: Option<ReferenceDensity>,
    pub ftilde: FeatureMap,
    pub mc_draws: usize,
    pub weight_cap: WeightCap,
    pub augmentation: AugmentationForm,
    pub augmentation_sign: AugmentationSign,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            alpha: Alpha::Identity,
            alpha_conditional: AlphaConditional::Reference,
            dfn: None,
            reference: None,
            ftilde: FeatureMap::Full,
            mc_draws: 200,
            weight_cap: WeightCap::default(),
            augmentation: AugmentationForm::Weighted,
            augmentation_sign: AugmentationSign::Projected,
        }
    }
}

impl NuisanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws == 0 {
            return Err(Error::InvalidConfig("mc_draws must be at least 1".into()));
        }
        if let WeightCap::Quantile(q) = self.weight_cap {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidConfig(format!("weight quantile {q} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn reference_for(&self, data: &Dataset) -> Result<ReferenceDensity> {
        match &self.reference {
            Some(r) => Ok(r.clone()),
            None => ReferenceDensity::from_sample(&data.a),
        }
    }

    pub fn instruments(&self) -> &FeatureMap {
        self.dfn.as_ref().unwrap_or(&self.ftilde)
    }
}

/// Fitted `f̃(A, C, β) = ψᵀ(φ(A, C, β) − φ̄)`; centering makes the in-sample mean zero.
#[derive(Debug, Clone)]
pub struct FTildeModel {
    pub psi: DVector<f64>,
    pub features: FeatureMap,
    pub centering: DVector<f64>,
}

impl FTildeModel {
    pub fn zero() -> Self {
        Self {
            psi: DVector::zeros(0),
            features: FeatureMap::Empty,
            centering: DVector::zeros(0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.psi.is_empty() || self.psi.iter().all(|&v| v == 0.0)
    }

    pub fn eval(&self, a: &[f64], c: &[f64], basis: &Basis) -> f64 {
        if self.psi.is_empty() {
            return 0.0;
        }
        let phi = self.features.eval(a, c, basis);
        phi.iter()
            .zip(self.centering.iter())
            .zip(self.psi.iter())
            .map(|((f, m), p)| (f - m) * p)
            .sum()
    }
}

struct FTildeSystem {
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
    centering: DVector<f64>,
}

fn ftilde_system(
    data: &Dataset,
    basis: &Basis,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
) -> Result<FTildeSystem> {
    let phi = spec.ftilde.matrix(data, basis)?;
    let inst = spec.instruments().matrix(data, basis)?;
    let s = phi.ncols();
    if inst.ncols() != s {
        return Err(Error::DimensionMismatch(format!(
            "d(A, C) has {} components, f̃ has {s} parameters",
            inst.ncols()
        )));
    }
    let n = data.n();
    let centering = phi.row_mean().transpose();
    if s == 0 {
        return Ok(FTildeSystem {
            lhs: DMatrix::zeros(0, 0),
            rhs: DVector::zeros(0),
            centering,
        });
    }
    let proj = &data.a * basis.matrix();
    let smoother = Smoother::new(&proj, smoothing.resolve(&proj)?, None)?;
    let mut values = DMatrix::zeros(n, 1 + 2 * s);
    values.set_column(0, &data.y);
    values.columns_mut(1, s).copy_from(&phi);
    values.columns_mut(1 + s, s).copy_from(&inst);
    let fit = smoother.leave_one_out(&values)?;
    let resid = values - fit.fitted;
    let y_res = resid.column(0);
    let phi_res = resid.columns(1, s);
    let inst_res = resid.columns(1 + s, s);
    Ok(FTildeSystem {
        lhs: inst_res.transpose() * phi_res / n as f64,
        rhs: inst_res.transpose() * y_res / n as f64,
        centering,
    })
}

/// Solves the linear estimating equations
/// `mean[{d − Ê(d | Aᵀβ)}{(Y − ψᵀφ) − Ê(Y − ψᵀφ | Aᵀβ)}] = 0` for ψ.
pub fn fit_ftilde(
    data: &Dataset,
    basis: &Basis,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
) -> Result<FTildeModel> {
    let sys = ftilde_system(data, basis, spec, smoothing)?;
    if sys.lhs.nrows() == 0 {
        return Ok(FTildeModel {
            psi: DVector::zeros(0),
            features: spec.ftilde.clone(),
            centering: sys.centering,
        });
    }
    let svd = sys.lhs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= SINGULAR_TOL * smax {
        return Err(Error::SingularSystem(
            "instrument residuals are collinear with feature residuals".into(),
        ));
    }
    let psi = sys
        .lhs
        .lu()
        .solve(&sys.rhs)
        .ok_or_else(|| Error::SingularSystem("f̃ system".into()))?;
    Ok(FTildeModel {
        psi,
        features: spec.ftilde.clone(),
        centering: sys.centering,
    })
}

/// Empirical estimating function of the `f̃` fit evaluated at `psi`.
pub fn ftilde_estimating_function(
    data: &Dataset,
    basis: &Basis,
    spec: &NuisanceSpec,
    smoothing: &SmoothingConfig,
    psi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sys = ftilde_system(data, basis, spec, smoothing)?;
    Ok(&sys.rhs - &sys.lhs * psi)
}

/// A frozen set of draws from the reference density.
#[derive(Debug, Clone)]
pub struct QDraws {
    /// `m × p`, one draw per row.
    pub draws: DMatrix<f64>,
}

impl QDraws {
    pub fn sample(reference: &ReferenceDensity, mc_draws: usize, rng: &mut RngStream) -> Result<Self> {
        if mc_draws == 0 {
            return Err(Error::InvalidConfig("mc_draws must be at least 1".into()));
        }
        let p = reference.p();
        let mut draws = DMatrix::zeros(mc_draws, p);
        for k in 0..mc_draws {
            draws.set_row(k, &reference.sample(rng).transpose());
        }
        Ok(Self { draws })
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    /// Average of `integrand(a_k, c)` over the stored draws.
    pub fn expectation_given_c<F>(&self, c: &[f64], integrand: F) -> DVector<f64>
    where
        F: Fn(&[f64], &[f64]) -> DVector<f64>,
    {
        let m = self.len();
        let mut acc: Option<DVector<f64>> = None;
        for k in 0..m {
            let a: Vec<f64> = self.draws.row(k).iter().copied().collect();
            let v = integrand(&a, c);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
        acc.expect("at least one draw") / m as f64
    }
}

/// Monte Carlo estimate of `E_q[integrand(A, c) | C = c]` with `A ~ g*`.
pub fn q_expectation_given_c<F>(
    integrand: F,
    c: &[f64],
    reference: &ReferenceDensity,
    mc_draws: usize,
    rng: &mut RngStream,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64], &[f64]) -> DVector<f64>,
{
    Ok(QDraws::sample(reference, mc_draws, rng)?.expectation_given_c(c, integrand))
}
