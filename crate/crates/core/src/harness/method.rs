//! The six benchmarked reduction methods and their dispatch.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::estimating::{EstimatingProblem, MomentDiagnostics};
use crate::kernel::SmoothingConfig;
use crate::metrics::{pca_directions, principal_hessian_directions, projection_distance};
use crate::nuisance::{
    fit_ftilde, fit_treatment_model, AlphaConditional, AugmentationForm, AugmentationSign, FeatureMap, NuisanceSpec,
    WeightCap,
};
use crate::rng::RngStream;
use crate::simulation::{Confounding, Dataset, SimulationTruth};
use crate::solver::{solve, SolveResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Regression estimating equation on unconfounded data.
    Regression,
    /// Regression estimating equation when `C` enters only the outcome.
    NoisyRegEval,
    /// Regression estimating equation on confounded data.
    ConfoundedRegEval,
    IpwCausal,
    AugCausal,
    Pca,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Regression,
        Method::NoisyRegEval,
        Method::ConfoundedRegEval,
        Method::IpwCausal,
        Method::AugCausal,
        Method::Pca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Regression => "regression",
            Method::NoisyRegEval => "noisy_reg_eval",
            Method::ConfoundedRegEval => "confounded_reg_eval",
            Method::IpwCausal => "ipw_causal",
            Method::AugCausal => "aug_causal",
            Method::Pca => "pca",
        }
    }

    /// Which simulated variant the method is evaluated on.
    pub fn data_variant(self) -> Confounding {
        match self {
            Method::Regression => Confounding::None,
            Method::NoisyRegEval => Confounding::NoiseOnly,
            _ => Confounding::Confounded,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['.', '-'], "_");
        Ok(match key.as_str() {
            "regression" | "reg" => Method::Regression,
            "noisy_reg_eval" | "noisy_reg" => Method::NoisyRegEval,
            "confounded_reg_eval" | "confounded_reg" => Method::ConfoundedRegEval,
            "ipw_causal" | "ipw" => Method::IpwCausal,
            "aug_causal" | "aug" => Method::AugCausal,
            "pca" => Method::Pca,
            _ => {
                return Err(Error::UnknownName {
                    kind: "method",
                    value: s.into(),
                })
            }
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().into()
    }
}

/// Parametric family for `f̃`, by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    Full,
    NoCovariates,
    Empty,
}

impl From<FeatureChoice> for FeatureMap {
    fn from(c: FeatureChoice) -> Self {
        match c {
            FeatureChoice::Full => FeatureMap::Full,
            FeatureChoice::NoCovariates => FeatureMap::NoCovariates,
            FeatureChoice::Empty => FeatureMap::Empty,
        }
    }
}

/// Serializable subset of [`NuisanceSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceSettings {
    /// Defaults to the misspecified family used to demonstrate robustness.
    pub ftilde: FeatureChoice,
    pub mc_draws: usize,
    pub weight_cap: WeightCap,
    pub augmentation: AugmentationForm,
    pub augmentation_sign: AugmentationSign,
    pub alpha_conditional: AlphaConditional,
}

impl Default for NuisanceSettings {
    fn default() -> Self {
        let spec = NuisanceSpec::default();
        Self {
            ftilde: FeatureChoice::NoCovariates,
            mc_draws: spec.mc_draws,
            weight_cap: spec.weight_cap,
            augmentation: spec.augmentation,
            augmentation_sign: spec.augmentation_sign,
            alpha_conditional: spec.alpha_conditional,
        }
    }
}

impl NuisanceSettings {
    pub fn to_spec(&self) -> NuisanceSpec {
        NuisanceSpec {
            ftilde: self.ftilde.into(),
            mc_draws: self.mc_draws,
            weight_cap: self.weight_cap,
            augmentation: self.augmentation,
            augmentation_sign: self.augmentation_sign,
            alpha_conditional: self.alpha_conditional,
            ..NuisanceSpec::default()
        }
    }
}

/// Where Newton iterations start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Leading principal directions of `A`, canonicalized.
    Pca,
    /// Principal Hessian directions of `Y` on `A`, IPW-weighted for the causal methods.
    #[default]
    Phd,
    /// The simulation truth (calibration runs only).
    Truth,
}

/// Everything a single method run needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSettings {
    pub solver: SolverConfig,
    pub kernel: SmoothingConfig,
    pub nuisance: NuisanceSettings,
    pub start: StartRule,
    /// Standard deviation of noise added to the free start parameters.
    pub start_jitter: f64,
    /// Refits of `f̃` for aug_causal, each followed by a full solve.
    pub aug_outer_iterations: usize,
    pub d: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            kernel: SmoothingConfig::default(),
            nuisance: NuisanceSettings::default(),
            start: StartRule::Phd,
            start_jitter: 0.0,
            aug_outer_iterations: 3,
            d: 2,
        }
    }
}

impl MethodSettings {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.nuisance.to_spec().validate()?;
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if self.aug_outer_iterations == 0 {
            return Err(Error::InvalidConfig("aug_outer_iterations must be at least 1".into()));
        }
        if !(self.start_jitter >= 0.0) {
            return Err(Error::InvalidConfig("start_jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A fitted basis with solver bookkeeping.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub beta_hat: Basis,
    pub converged: bool,
    pub iterations: usize,
    pub final_norm: f64,
    pub restart_index: usize,
    pub singular_jacobians: usize,
    pub diagnostics: MomentDiagnostics,
}

fn starting_basis(
    data: &Dataset,
    truth: Option<&SimulationTruth>,
    weights: Option<&[f64]>,
    settings: &MethodSettings,
    rng: &mut RngStream,
) -> Result<Basis> {
    let raw: DMatrix<f64> = match settings.start {
        StartRule::Pca => pca_directions(&data.a, settings.d)?.directions,
        StartRule::Phd => principal_hessian_directions(&data.a, &data.y, weights, settings.d)?,
        StartRule::Truth => truth
            .ok_or_else(|| Error::InvalidConfig("start = \"truth\" needs a simulation truth".into()))?
            .beta_true
            .clone(),
    };
    let basis = Basis::canonicalize(&raw)?;
    if settings.start_jitter > 0.0 {
        let free: Vec<f64> = basis
            .free_params()
            .iter()
            .map(|v| v + settings.start_jitter * rng.standard_normal())
            .collect();
        basis.with_free(&free)
    } else {
        Ok(basis)
    }
}

/// Fits `method` on `data`. The method's data variant is not checked here.
pub fn fit_method(
    method: Method,
    data: &Dataset,
    truth: Option<&SimulationTruth>,
    settings: &MethodSettings,
    rng: &mut RngStream,
) -> Result<MethodFit> {
    settings.validate()?;
    if method == Method::Pca {
        let pca = pca_directions(&data.a, settings.d)?;
        let beta_hat = Basis::canonicalize(&pca.directions)?;
        return Ok(MethodFit {
            beta_hat,
            converged: true,
            iterations: 0,
            final_norm: 0.0,
            restart_index: 0,
            singular_jacobians: 0,
            diagnostics: MomentDiagnostics::default(),
        });
    }

    let mut start_rng = rng.child(0);
    let mut solve_rng = rng.child(1);
    let mut draw_rng = rng.child(2);
    let spec = settings.nuisance.to_spec();
    let kernel = settings.kernel;

    match method {
        Method::Regression | Method::NoisyRegEval | Method::ConfoundedRegEval => {
            let start = starting_basis(data, truth, None, settings, &mut start_rng)?;
            let problem = EstimatingProblem::regression(data, &spec, kernel)?;
            let r = solve(|b: &Basis| problem.u_regression(b), &start, &settings.solver, &mut solve_rng)?;
            Ok(from_solve(r))
        }
        Method::IpwCausal => {
            let model = fit_treatment_model(data)?;
            let problem = EstimatingProblem::ipw(data, &model, &spec, kernel)?;
            let weights = problem.weights().map(|w| w.weights.as_slice());
            let start = starting_basis(data, truth, weights, settings, &mut start_rng)?;
            let r = solve(|b: &Basis| problem.u_ipw(b), &start, &settings.solver, &mut solve_rng)?;
            Ok(from_solve(r))
        }
        Method::AugCausal => {
            let model = fit_treatment_model(data)?;
            let problem = EstimatingProblem::augmented(data, &model, &spec, kernel, &mut draw_rng)?;
            let weights = problem.weights().map(|w| w.weights.as_slice());
            let start = starting_basis(data, truth, weights, settings, &mut start_rng)?;
            let mut current = start;
            let mut total_iterations = 0;
            let mut singular = 0;
            let mut last = None;
            for outer in 0..settings.aug_outer_iterations {
                let ftilde = fit_ftilde(data, &current, &spec, &kernel)?;
                let table = problem.ftilde_table(&current, &ftilde)?;
                let mut inner_rng = solve_rng.child(outer as u64);
                let r = solve(
                    |b: &Basis| problem.u_augmented_with(b, &ftilde, &table),
                    &current,
                    &settings.solver,
                    &mut inner_rng,
                )?;
                total_iterations += r.iterations;
                singular += r.singular_jacobians;
                let moved = projection_distance(current.matrix(), r.beta_hat.matrix())?.value();
                current = r.beta_hat.clone();
                last = Some(r);
                if moved < 1e-8 {
                    break;
                }
            }
            let r = last.expect("at least one outer iteration");
            let mut fit = from_solve(r);
            fit.iterations = total_iterations;
            fit.singular_jacobians = singular;
            Ok(fit)
        }
        Method::Pca => unreachable!("handled above"),
    }
}

fn from_solve(r: SolveResult) -> MethodFit {
    MethodFit {
        converged: r.converged,
        iterations: r.iterations,
        final_norm: r.final_norm,
        restart_index: r.restart_index,
        singular_jacobians: r.singular_jacobians,
        diagnostics: r.diagnostics,
        beta_hat: r.beta_hat,
    }
}
