//! Property tests for invariants that cut across modules.

use causal_sdr::kernel::{kernel_regress, product_kernel, ProjectedSample};
use causal_sdr::nuisance::fit_treatment_model;
use causal_sdr::solver::solve;
use causal_sdr::{
    generate, pca_directions, projection_distance, u_ipw, u_regression, Basis, Case, Confounding, Dataset,
    KernelConfig, MomentValue, NuisanceSpec, RngStream, ScenarioSpec, SmoothingConfig, SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn gaussian(rng: &mut RngStream, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.standard_normal())
}

fn case2(confounding: Confounding, n: usize, seed: u64) -> Dataset {
    generate(&ScenarioSpec {
        case: Case::Case2,
        p: 6,
        confounding,
        n,
        seed,
    })
    .unwrap()
    .0
}

fn permuted(d: &Dataset, order: &[usize]) -> Dataset {
    let n = d.n();
    Dataset::new(
        DVector::from_fn(n, |i, _| d.y[order[i]]),
        DMatrix::from_fn(n, d.p(), |i, j| d.a[(order[i], j)]),
        DMatrix::from_fn(n, d.q(), |i, j| d.c[(order[i], j)]),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_kernel_is_even(u in prop::collection::vec(-2.0f64..2.0, 1..4), h in 0.1f64..3.0) {
        let cfg = KernelConfig::new(h, 1e-8).unwrap();
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        prop_assert_eq!(product_kernel(&u, &cfg), product_kernel(&neg, &cfg));
    }

    #[test]
    fn kernel_regress_ignores_sample_order(seed in 0u64..5000, shift in 1usize..19) {
        let mut rng = RngStream::new(seed);
        let samples: Vec<ProjectedSample> = (0..20)
            .map(|_| ProjectedSample {
                projection: vec![rng.standard_normal(), rng.standard_normal()],
                value: vec![rng.standard_normal()],
            })
            .collect();
        let mut rotated = samples.clone();
        rotated.rotate_left(shift);
        let cfg = KernelConfig::new(1.5, 1e-8).unwrap();
        let q = [0.1, -0.2];
        let a = kernel_regress(&samples, &q, &cfg).unwrap().value[0];
        let b = kernel_regress(&rotated, &q, &cfg).unwrap().value[0];
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn distance_triangle_inequality(seed in 0u64..10_000, p in prop::sample::select(vec![6usize, 12])) {
        let mut rng = RngStream::new(seed);
        let (a, b, c) = (gaussian(&mut rng, p, 2), gaussian(&mut rng, p, 2), gaussian(&mut rng, p, 2));
        let ab = projection_distance(&a, &b).unwrap().value();
        let bc = projection_distance(&b, &c).unwrap().value();
        let ac = projection_distance(&a, &c).unwrap().value();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn pca_columns_orthonormal(seed in 0u64..10_000) {
        let mut rng = RngStream::new(seed);
        let a = gaussian(&mut rng, 40, 6) * gaussian(&mut rng, 6, 6);
        let dirs = pca_directions(&a, 2).unwrap().directions;
        let gram = dirs.transpose() * &dirs;
        prop_assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn solver_never_returns_worse_than_start(seed in 0u64..10_000, scale in 0.1f64..3.0) {
        // cubic moment with several roots; Newton may wander
        let mut rng = RngStream::new(seed);
        let target: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let moment = move |b: &Basis| -> causal_sdr::Result<MomentValue> {
            let x = b.free_params();
            Ok(MomentValue {
                vector: DVector::from_fn(4, |i, _| x[i].powi(3) - scale * x[(i + 1) % 4] - target[i]),
                diagnostics: Default::default(),
            })
        };
        let start = Basis::from_free(4, 2, &[0.3, -0.1, 0.2, 0.4]).unwrap();
        let start_norm = moment(&start).unwrap().norm();
        let cfg = SolverConfig { max_iterations: 15, restarts: 2, ..SolverConfig::default() };
        let r = solve(&moment, &start, &cfg, &mut RngStream::new(seed)).unwrap();
        prop_assert!(r.final_norm <= start_norm || !r.converged);
        prop_assert!(r.final_norm <= start_norm + 1e-12);
        let again = solve(&moment, &start, &cfg, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn treatment_fit_is_translation_equivariant(seed in 0u64..1000, shift in prop::collection::vec(-5.0f64..5.0, 6)) {
        let d = case2(Confounding::Confounded, 120, seed);
        let mut moved = d.clone();
        for mut row in moved.a.row_iter_mut() {
            for (v, s) in row.iter_mut().zip(&shift) {
                *v += s;
            }
        }
        let m0 = fit_treatment_model(&d).unwrap();
        let m1 = fit_treatment_model(&moved).unwrap();
        for j in 0..6 {
            prop_assert!((m1.coefficients[(j, 0)] - m0.coefficients[(j, 0)] - shift[j]).abs() < 1e-8);
        }
        let slopes = |m: &causal_sdr::TreatmentModel| m.coefficients.columns(1, 4).into_owned();
        prop_assert!((slopes(&m1) - slopes(&m0)).abs().max() < 1e-8);
        prop_assert!((m1.covariance - m0.covariance).abs().max() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn moments_scale_with_outcome(seed in 0u64..1000, k in -4.0f64..4.0) {
        let d = case2(Confounding::Confounded, 150, seed);
        let mut scaled = d.clone();
        scaled.y *= k;
        let (spec, sm) = (NuisanceSpec::default(), SmoothingConfig::default());
        let b = Basis::from_free(6, 2, &[0.5, 0.2, -0.3, 0.9, 0.1, 1.0, 0.4, -0.6]).unwrap();
        let r0 = u_regression(&d, &b, &spec, &sm).unwrap().vector;
        let r1 = u_regression(&scaled, &b, &spec, &sm).unwrap().vector;
        // exact up to rounding, so the tolerance scales with the entries
        prop_assert!((r1 - &r0 * k).amax() <= 1e-13 * (1.0 + k.abs()) * (1.0 + r0.amax()));
        let tm = fit_treatment_model(&d).unwrap();
        let i0 = u_ipw(&d, &b, &tm, &spec, &sm).unwrap().vector;
        let i1 = u_ipw(&scaled, &b, &tm, &spec, &sm).unwrap().vector;
        prop_assert!((i1 - &i0 * k).amax() <= 1e-13 * (1.0 + k.abs()) * (1.0 + i0.amax()));
    }

    #[test]
    fn moments_ignore_sample_order(seed in 0u64..1000, perm_seed in 0u64..1000) {
        let d = case2(Confounding::Confounded, 120, seed);
        let mut order: Vec<usize> = (0..d.n()).collect();
        let mut rng = RngStream::new(perm_seed);
        for i in (1..order.len()).rev() {
            let j = (rng.uniform() * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let shuffled = permuted(&d, &order);
        let (spec, sm) = (NuisanceSpec::default(), SmoothingConfig::default());
        let b = Basis::from_free(6, 2, &[0.5, 0.2, -0.3, 0.9, 0.1, 1.0, 0.4, -0.6]).unwrap();
        let r0 = u_regression(&d, &b, &spec, &sm).unwrap().vector;
        let r1 = u_regression(&shuffled, &b, &spec, &sm).unwrap().vector;
        prop_assert!((r0 - r1).abs().max() < 1e-10);
        let i0 = u_ipw(&d, &b, &fit_treatment_model(&d).unwrap(), &spec, &sm).unwrap().vector;
        let i1 = u_ipw(&shuffled, &b, &fit_treatment_model(&shuffled).unwrap(), &spec, &sm).unwrap().vector;
        prop_assert!((i0 - i1).abs().max() < 1e-9);
    }

    #[test]
    fn moment_depends_only_on_column_space(seed in 0u64..1000, m in prop::collection::vec(-2.0f64..2.0, 4)) {
        let mix = DMatrix::from_row_slice(2, 2, &m);
        prop_assume!(mix.determinant().abs() > 0.2);
        let d = case2(Confounding::None, 150, seed);
        let (spec, sm) = (NuisanceSpec::default(), SmoothingConfig::default());
        let raw = DMatrix::from_row_slice(6, 2, &[1.0, 0.3, 0.2, 1.0, 0.5, -0.4, 0.1, 0.8, -0.6, 0.2, 0.3, 0.3]);
        let b0 = Basis::canonicalize(&raw).unwrap();
        let b1 = Basis::canonicalize(&(&raw * mix)).unwrap();
        let n0 = u_regression(&d, &b0, &spec, &sm).unwrap().norm();
        let n1 = u_regression(&d, &b1, &spec, &sm).unwrap().norm();
        prop_assert!((n0 - n1).abs() < 1e-6);
    }
}
