//! Canonical parameterization of a `p × d` reduction.
//!
//! Only the column space of β is identified, so every basis is stored with
//! its top `d × d` block pinned to the identity. The free parameters are the
//! remaining `(p − d) × d` entries, flattened column-major.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    matrix: DMatrix<f64>,
}

impl Basis {
    /// Pins `m` to the canonical form `m · (top block)⁻¹`.
    pub fn canonicalize(m: &DMatrix<f64>) -> Result<Self> {
        let (p, d) = m.shape();
        if d == 0 || d >= p {
            return Err(Error::InvalidConfig(format!(
                "basis must satisfy 0 < d < p, got {p} x {d}"
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("basis".into()));
        }
        let top = m.rows(0, d).into_owned();
        let scale = top.abs().max().max(1.0);
        let lu = top.lu();
        let det = lu.determinant();
        if det.abs() <= PIVOT_TOL * scale.powi(d as i32) {
            return Err(Error::RankDeficient);
        }
        let inv = lu.try_inverse().ok_or(Error::RankDeficient)?;
        let mut matrix = m * inv;
        matrix.rows_mut(0, d).copy_from(&DMatrix::identity(d, d));
        Ok(Self { matrix })
    }

    /// Builds the canonical basis from its free entries (column-major).
    pub fn from_free(p: usize, d: usize, free: &[f64]) -> Result<Self> {
        if d == 0 || d >= p {
            return Err(Error::InvalidConfig(format!(
                "basis must satisfy 0 < d < p, got {p} x {d}"
            )));
        }
        if free.len() != (p - d) * d {
            return Err(Error::DimensionMismatch(format!(
                "{} free entries for a {p} x {d} basis",
                free.len()
            )));
        }
        let mut matrix = DMatrix::zeros(p, d);
        matrix.rows_mut(0, d).copy_from(&DMatrix::identity(d, d));
        for k in 0..d {
            for j in 0..p - d {
                matrix[(d + j, k)] = free[k * (p - d) + j];
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_free(&self) -> usize {
        (self.p() - self.d()) * self.d()
    }

    pub fn free_params(&self) -> Vec<f64> {
        let (p, d) = (self.p(), self.d());
        let mut out = Vec::with_capacity(self.n_free());
        for k in 0..d {
            for j in d..p {
                out.push(self.matrix[(j, k)]);
            }
        }
        out
    }

    pub fn with_free(&self, free: &[f64]) -> Result<Self> {
        Self::from_free(self.p(), self.d(), free)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::projection_distance;

    #[test]
    fn canonical_form_keeps_column_space() {
        let m = DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 1.0, -1.0, 0.5, 3.0, -2.0, 0.0]);
        let b = Basis::canonicalize(&m).unwrap();
        assert_eq!(b.matrix().rows(0, 2), DMatrix::<f64>::identity(2, 2));
        assert!(projection_distance(b.matrix(), &m).unwrap().value() < 1e-12);
    }

    #[test]
    fn free_round_trip() {
        let b = Basis::from_free(5, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(b.matrix()[(2, 0)], 1.0);
        assert_eq!(b.matrix()[(4, 1)], 6.0);
        assert_eq!(b.free_params(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(Basis::from_free(5, 2, &[1.0]).is_err());
    }

    #[test]
    fn singular_top_block_rejected() {
        let m = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 1.0]);
        assert!(matches!(Basis::canonicalize(&m), Err(Error::RankDeficient)));
    }

    #[test]
    fn true_simulation_basis_has_pinnable_top() {
        let t = crate::simulation::SimulationTruth::for_dimension(6);
        let b = Basis::canonicalize(&t.beta_true).unwrap();
        // rows alternate between the two reduced coordinates
        let expected = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        for (i, e) in expected.iter().enumerate() {
            assert!((b.matrix()[(i, 0)] - e).abs() < 1e-12);
            assert!((b.matrix()[(i, 1)] - (1.0 - e)).abs() < 1e-12);
        }
    }
}
