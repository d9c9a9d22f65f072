//! Subspace distance and the principal-component baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Above this condition number projectors are built from an orthonormal
/// basis instead of `β(βᵀβ)⁻¹βᵀ`.
const NORMAL_EQUATIONS_MAX_COND: f64 = 1e8;
const RANK_TOL: f64 = 1e-12;
const SPECTRAL_TIE_TOL: f64 = 1e-10;

/// Frobenius distance between two column-space projectors, in `[0, √(2d)]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SubspaceDistance(pub f64);

impl SubspaceDistance {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Orthogonal projector onto the column space of `beta`.
pub fn projector(beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("basis".into()));
    }
    let (p, d) = beta.shape();
    if d == 0 || d > p {
        return Err(Error::RankDeficient);
    }
    let sv = beta.clone().svd(true, false);
    let smax = sv.singular_values.max();
    let smin = sv.singular_values.min();
    if smax == 0.0 || smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient);
    }
    if smax / smin <= NORMAL_EQUATIONS_MAX_COND {
        let gram = beta.transpose() * beta;
        let inv = gram
            .cholesky()
            .ok_or(Error::RankDeficient)?
            .inverse();
        Ok(beta * inv * beta.transpose())
    } else {
        let u = sv.u.expect("u requested");
        Ok(&u * u.transpose())
    }
}

/// `‖P(β̂) − P(β)‖_F`.
pub fn projection_distance(
    beta_hat: &DMatrix<f64>,
    beta_true: &DMatrix<f64>,
) -> Result<SubspaceDistance> {
    if beta_hat.shape() != beta_true.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            beta_hat.shape(),
            beta_true.shape()
        )));
    }
    let diff = projector(beta_hat)? - projector(beta_true)?;
    Ok(SubspaceDistance(diff.norm()))
}

/// Leading principal directions of a treatment matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `p × d`, orthonormal columns, largest-magnitude entry of each column positive.
    pub directions: DMatrix<f64>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// The d-th and (d+1)-th eigenvalues tie; the split is by eigenvector index.
    pub degenerate_spectrum: bool,
}

pub fn pca_directions(a: &DMatrix<f64>, d: usize) -> Result<Pca> {
    let (n, p) = a.shape();
    if n <= p {
        return Err(Error::InsufficientSamples { n, p });
    }
    if d == 0 || d > p {
        return Err(Error::InvalidConfig(format!("cannot take {d} directions from p = {p}")));
    }
    let means = a.row_mean();
    let mut centered = a.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps the index tie-break
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = eigenvalues[0].abs().max(1.0);
    let degenerate_spectrum =
        d < p && (eigenvalues[d - 1] - eigenvalues[d]).abs() <= SPECTRAL_TIE_TOL * scale;

    let mut directions = DMatrix::zeros(p, d);
    for (k, &i) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        v /= v.norm();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        directions.set_column(k, &v);
    }
    Ok(Pca {
        directions,
        eigenvalues,
        degenerate_spectrum,
    })
}

/// Principal Hessian directions: the `d` eigenvectors of
/// `Σ^{-1/2} E[(Y − Ȳ)(A − Ā)(A − Ā)ᵀ] Σ^{-1/2}` with the largest absolute
/// eigenvalues, mapped back by `Σ^{-1/2}`. Optional weights reweight every
/// moment, e.g. to target a reference law.
pub fn principal_hessian_directions(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    d: usize,
) -> Result<DMatrix<f64>> {
    let (n, p) = a.shape();
    if n <= p {
        return Err(Error::InsufficientSamples { n, p });
    }
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch("pHd inputs have different lengths".into()));
    }
    if d == 0 || d > p {
        return Err(Error::InvalidConfig(format!("cannot take {d} directions from p = {p}")));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig("weights sum to zero".into()));
    }
    let mean_a = (0..n).fold(DVector::zeros(p), |acc, i| acc + a.row(i).transpose() * w(i)) / total;
    let mean_y = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / total;
    let mut cov = DMatrix::zeros(p, p);
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..n {
        let x = a.row(i).transpose() - &mean_a;
        let outer = &x * x.transpose() * w(i);
        hess += &outer * (y[i] - mean_y);
        cov += outer;
    }
    cov /= total;
    hess /= total;

    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.min() <= 1e-12 * eig.eigenvalues.max().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateCovariance);
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eig.eigenvectors.transpose();
    let standardized = &inv_sqrt * hess * &inv_sqrt;
    let h = SymmetricEigen::new((&standardized + standardized.transpose()) / 2.0);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        h.eigenvalues[j]
            .abs()
            .partial_cmp(&h.eigenvalues[i].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut directions = DMatrix::zeros(p, d);
    for (k, &i) in order.iter().take(d).enumerate() {
        let v = &inv_sqrt * h.eigenvectors.column(i);
        directions.set_column(k, &(&v / v.norm()));
    }
    Ok(directions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.standard_normal())
    }

    #[test]
    fn phd_recovers_quadratic_directions() {
        let mut rng = RngStream::new(21);
        let (n, p) = (5000, 6);
        let a = random_matrix(&mut rng, n, p);
        let mut b = DMatrix::zeros(p, 2);
        b[(0, 0)] = 1.0;
        b[(1, 0)] = 1.0;
        b[(2, 1)] = 1.0;
        b[(4, 1)] = -1.0;
        let u = &a * &b;
        let y = DVector::from_fn(n, |i, _| u[(i, 0)].powi(2) + u[(i, 1)].powi(2) + 0.5 * rng.standard_normal());
        let dirs = principal_hessian_directions(&a, &y, None, 2).unwrap();
        assert!(projection_distance(&dirs, &b).unwrap().value() < 0.2);
    }

    #[test]
    fn phd_unit_weights_match_unweighted() {
        let mut rng = RngStream::new(22);
        let a = random_matrix(&mut rng, 100, 4);
        let y = DVector::from_fn(100, |i, _| a[(i, 0)] * a[(i, 1)]);
        let plain = principal_hessian_directions(&a, &y, None, 2).unwrap();
        let weighted = principal_hessian_directions(&a, &y, Some(&[1.0; 100]), 2).unwrap();
        assert!(projection_distance(&plain, &weighted).unwrap().value() < 1e-10);
    }

    #[test]
    fn phd_rejects_bad_inputs() {
        let mut rng = RngStream::new(23);
        let a = random_matrix(&mut rng, 5, 5);
        let y = DVector::zeros(5);
        assert!(matches!(
            principal_hessian_directions(&a, &y, None, 2),
            Err(Error::InsufficientSamples { .. })
        ));
        let a = random_matrix(&mut rng, 20, 3);
        assert!(principal_hessian_directions(&a, &DVector::zeros(19), None, 1).is_err());
        assert!(principal_hessian_directions(&a, &DVector::zeros(20), Some(&[0.0; 20]), 1).is_err());
        assert!(principal_hessian_directions(&a, &DVector::zeros(20), None, 4).is_err());
    }

    #[test]
    fn same_column_space_is_zero() {
        let mut rng = RngStream::new(1);
        let b = random_matrix(&mut rng, 6, 2);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 3.0]);
        let dist = projection_distance(&(&b * m), &b).unwrap().value();
        assert!(dist < 1e-10);
    }

    #[test]
    fn orthogonal_axes() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_relative_eq!(
            projection_distance(&e1, &e2).unwrap().value(),
            2f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn rank_deficient_rejected() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(projector(&b), Err(Error::RankDeficient)));
        let shape = projection_distance(&DMatrix::zeros(3, 1), &DMatrix::zeros(4, 1));
        assert!(matches!(shape, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn ill_conditioned_uses_orthonormal_route() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1e-10, 0.0, 0.0]);
        let p = projector(&b).unwrap();
        assert!((&p * &p - &p).abs().max() < 1e-9);
        assert_relative_eq!(p.trace(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn pca_recovers_axes() {
        let mut rng = RngStream::new(4);
        let n = 5000;
        let sds = [3.0, 2.0, 1.0];
        let a = DMatrix::from_fn(n, 3, |_, j| sds[j] * rng.standard_normal());
        let pca = pca_directions(&a, 2).unwrap();
        assert!((pca.directions.column(0).abs() - DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).norm() < 0.05);
        assert!((pca.directions.column(1).abs() - DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).norm() < 0.05);
        assert!(pca.directions.column(0)[0] > 0.0);
    }

    #[test]
    fn pca_full_rank_projector_is_identity() {
        let mut rng = RngStream::new(5);
        let a = random_matrix(&mut rng, 50, 4);
        let pca = pca_directions(&a, 4).unwrap();
        let p = projector(&pca.directions).unwrap();
        assert!((p - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-10);
        // distance from the identity projector to a rank-2 projector is √(p − 2)
        let truth = DMatrix::from_fn(4, 2, |i, j| f64::from(u8::from(i == j)));
        let dist = projection_distance(&pca.directions.columns(0, 4).into_owned(), &DMatrix::identity(4, 4));
        assert!(dist.unwrap().value() < 1e-10);
        let full = DMatrix::<f64>::identity(4, 4) - projector(&truth).unwrap();
        assert_relative_eq!(full.norm(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pca_rotation_equivariant() {
        let mut rng = RngStream::new(6);
        let sds = [4.0, 2.0, 1.0, 0.5];
        let a = DMatrix::from_fn(400, 4, |_, j| sds[j] * rng.standard_normal());
        let q = random_matrix(&mut rng, 4, 4).qr().q();
        let pa = projector(&pca_directions(&a, 2).unwrap().directions).unwrap();
        let rotated = &a * q.transpose();
        let pr = projector(&pca_directions(&rotated, 2).unwrap().directions).unwrap();
        let expected = &q * pa * q.transpose();
        assert!((pr - expected).abs().max() < 1e-8);
    }

    #[test]
    fn pca_flags_ties() {
        // isotropic design: exactly equal sample variances
        let a = DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        );
        let pca = pca_directions(&a, 1).unwrap();
        assert!(pca.degenerate_spectrum);
        assert!(matches!(
            pca_directions(&a.rows(0, 2).into_owned(), 1),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_invariant(seed in 0u64..10_000) {
            let mut rng = RngStream::new(seed);
            let x = random_matrix(&mut rng, 6, 2);
            let y = random_matrix(&mut rng, 6, 2);
            let m = random_matrix(&mut rng, 2, 2) + DMatrix::identity(2, 2) * 3.0;
            let dxy = projection_distance(&x, &y).unwrap().value();
            let dyx = projection_distance(&y, &x).unwrap().value();
            prop_assert!((dxy - dyx).abs() < 1e-10);
            let dm = projection_distance(&(&x * &m), &y).unwrap().value();
            prop_assert!((dxy - dm).abs() < 1e-10);
            prop_assert!(dxy >= 0.0 && dxy <= 2.0 + 1e-12);
        }

        #[test]
        fn triangle_inequality(seed in 0u64..10_000) {
            let mut rng = RngStream::new(seed);
            let x = random_matrix(&mut rng, 6, 2);
            let y = random_matrix(&mut rng, 6, 2);
            let z = random_matrix(&mut rng, 6, 2);
            let d = |a: &DMatrix<f64>, b: &DMatrix<f64>| projection_distance(a, b).unwrap().value();
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
        }

        #[test]
        fn pca_columns_orthonormal(seed in 0u64..10_000) {
            let mut rng = RngStream::new(seed);
            let a = random_matrix(&mut rng, 30, 5);
            let v = pca_directions(&a, 3).unwrap().directions;
            let gram = v.transpose() * &v;
            prop_assert!((gram - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-10);
        }
    }
}
