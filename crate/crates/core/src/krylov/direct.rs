//! Sparse direct solves through faer.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::Mat;

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Factorization of a sparse matrix: Cholesky for SPD input, LU otherwise.
#[derive(Clone, Debug)]
pub enum SparseFactor {
    Cholesky(Llt<usize, f64>, usize),
    Lu(Lu<usize, f64>, usize),
}

impl SparseFactor {
    /// Cholesky factorization; fails on a non-positive pivot.
    pub fn cholesky(m: &Csr) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Factorization("matrix is not square".into()));
        }
        let llt = m
            .to_faer()
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::Factorization(format!("Cholesky: {e}")))?;
        Ok(Self::Cholesky(llt, m.nrows))
    }

    pub fn lu(m: &Csr) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Factorization("matrix is not square".into()));
        }
        let lu = m.to_faer().sp_lu().map_err(|e| Error::Factorization(format!("LU: {e}")))?;
        Ok(Self::Lu(lu, m.nrows))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        match self {
            Self::Cholesky(f, _) => f.solve_in_place(rhs.as_mut()),
            Self::Lu(f, _) => f.solve_in_place(rhs.as_mut()),
        }
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }
}

impl LinearOperator for SparseFactor {
    fn dim(&self) -> usize {
        match self {
            Self::Cholesky(_, n) | Self::Lu(_, n) => *n,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.solve(x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_hand_solution() {
        let m = Csr::from_triplets(2, 2, vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        for f in [SparseFactor::cholesky(&m).unwrap(), SparseFactor::lu(&m).unwrap()] {
            let x = f.solve(&[1.0, 2.0]);
            assert!((x[0] - 1.0 / 11.0).abs() < 1e-15);
            assert!((x[1] - 7.0 / 11.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = SparseFactor::cholesky(&Csr::identity(5)).unwrap();
        let b = super::super::probe_vector(5, 2);
        assert_eq!(f.solve(&b), b);
    }

    #[test]
    fn indefinite_input_rejected_by_cholesky() {
        let m = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(SparseFactor::cholesky(&m), Err(Error::Factorization(_))));
        assert!(SparseFactor::lu(&m).is_ok());
    }
}
