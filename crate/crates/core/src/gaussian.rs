//! Dense Gaussian primitives: beliefs, PSD-tolerant square roots, block
//! composition and marginal extraction.
//!
//! All matrices here are small (a few dozen rows at most), so everything is
//! stored densely in `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute asymmetry tolerated in a covariance after any public operation.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Contiguous slice `[offset, offset + length)` of a state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexRange {
    pub offset: usize,
    pub length: usize,
}

impl IndexRange {
    pub const fn new(offset: usize, length: usize) -> Self {
        Self { offset, length }
    }

    pub const fn end(&self) -> usize {
        self.offset + self.length
    }

    /// Fails unless the range is non-empty and fits in a vector of `dim`.
    pub fn check(&self, dim: usize) -> Result<()> {
        if self.length == 0 || self.end() > dim {
            return Err(Error::OutOfBounds {
                offset: self.offset,
                length: self.length,
                dim,
            });
        }
        Ok(())
    }
}

/// Mean vector and covariance matrix of a (possibly approximate) Gaussian.
///
/// This is the payload of every belief and message in the library.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Builds a belief, checking dimensions and symmetrizing the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "covariance shape vs mean length",
                expected: d,
                got: if cov.nrows() != d {
                    cov.nrows()
                } else {
                    cov.ncols()
                },
            });
        }
        let mut cov = cov;
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::DimensionMismatch {
                context: "covariance entries vs mean length squared",
                expected: d * d,
                got: cov_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_row_major),
        )
    }

    /// Point mass at `mean` (zero covariance).
    pub fn point(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Largest absolute difference between `cov` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        max_asymmetry(&self.cov)
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        nalgebra::SymmetricEigen::new(self.cov.clone())
            .eigenvalues
            .min()
    }

    /// Checks the symmetry and positive-semidefiniteness invariants.
    pub fn satisfies_invariants(&self) -> bool {
        let d = self.dim();
        if self.cov.nrows() != d || self.cov.ncols() != d {
            return false;
        }
        if !self
            .mean
            .iter()
            .chain(self.cov.iter())
            .all(|v| v.is_finite())
        {
            return false;
        }
        if self.asymmetry() > SYMMETRY_TOL {
            return false;
        }
        let scale = if d == 0 {
            1.0
        } else {
            (self.cov.trace() / d as f64).max(1.0)
        };
        self.min_eigenvalue() >= -1e-9 * scale
    }
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Default pivot tolerance `1e-12 * max(1, trace / d)`.
pub fn default_pivot_tol(c: &DMatrix<f64>) -> f64 {
    let d = c.nrows().max(1) as f64;
    1e-12 * (c.trace() / d).max(1.0)
}

/// Lower-triangular `L` with `L Lᵀ = C`, tolerating semidefinite input.
///
/// Pivots at or below `pivot_tol` zero their column instead of failing, so
/// blocks with zero covariance (anchors) factor cleanly. A pivot below
/// `-pivot_tol` triggers one retry on `C + pivot_tol I`; a second negative
/// pivot is reported as [`Error::NotPsd`].
pub fn psd_sqrt(c: &DMatrix<f64>, pivot_tol: f64) -> Result<DMatrix<f64>> {
    if c.nrows() != c.ncols() {
        return Err(Error::DimensionMismatch {
            context: "psd_sqrt expects a square matrix",
            expected: c.nrows(),
            got: c.ncols(),
        });
    }
    match cholesky_semidefinite(c, pivot_tol) {
        Ok(l) => Ok(l),
        Err(_) => {
            let jittered = c + DMatrix::identity(c.nrows(), c.ncols()) * pivot_tol;
            cholesky_semidefinite(&jittered, pivot_tol)
        }
    }
}

/// [`psd_sqrt`] with [`default_pivot_tol`].
pub fn psd_sqrt_default(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_sqrt(c, default_pivot_tol(c))
}

fn cholesky_semidefinite(c: &DMatrix<f64>, pivot_tol: f64) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = c[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -pivot_tol || !pivot.is_finite() {
            return Err(Error::NotPsd { column: j, pivot });
        }
        if pivot <= pivot_tol {
            // column stays zero
            continue;
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut acc = c[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / diag;
        }
    }
    Ok(l)
}

/// Block-diagonal matrix with the given square blocks on its diagonal.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput("block_diag needs at least one block"));
    }
    for b in blocks {
        if b.nrows() != b.ncols() {
            return Err(Error::DimensionMismatch {
                context: "block_diag expects square blocks",
                expected: b.nrows(),
                got: b.ncols(),
            });
        }
    }
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut at = 0;
    for b in blocks {
        let n = b.nrows();
        out.view_mut((at, at), (n, n)).copy_from(*b);
        at += n;
    }
    Ok(out)
}

/// Marginal of `b` on the coordinates selected by `r`.
pub fn extract_marginal(b: &GaussianBelief, r: IndexRange) -> Result<GaussianBelief> {
    r.check(b.dim())?;
    let mean = b.mean.rows(r.offset, r.length).into_owned();
    let mut cov = b
        .cov
        .view((r.offset, r.offset), (r.length, r.length))
        .into_owned();
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn sqrt_of_identity() {
        let l = psd_sqrt_default(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
    }

    #[test]
    fn sqrt_of_diagonal() {
        let l = psd_sqrt_default(&dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap();
        assert_eq!(l, dmatrix![2.0, 0.0; 0.0, 3.0]);
    }

    #[test]
    fn zero_pivot_column_is_zeroed() {
        let c = dmatrix![1.0, 0.0; 0.0, 0.0];
        let l = psd_sqrt_default(&c).unwrap();
        assert_eq!(l, dmatrix![1.0, 0.0; 0.0, 0.0]);
        assert_eq!(&l * l.transpose(), c);
    }

    #[test]
    fn zero_matrix_has_zero_root() {
        let l = psd_sqrt_default(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(l, DMatrix::zeros(4, 4));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let c = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(psd_sqrt_default(&c), Err(Error::NotPsd { .. })));
        let c = dmatrix![-1.0];
        assert!(matches!(psd_sqrt_default(&c), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn tiny_negative_pivot_is_absorbed() {
        // rank-1 matrix whose second pivot lands slightly below zero
        let v = [1.0, 1.0 + 1e-9];
        let mut c = DMatrix::from_fn(2, 2, |i, j| v[i] * v[j]);
        c[(1, 1)] -= 5e-13;
        let l = psd_sqrt(&c, 1e-12).unwrap();
        assert!(rel_frob(&(&l * l.transpose()), &c) < 1e-10);
    }

    #[test]
    fn anchor_blocks_inside_composite() {
        let c = block_diag(&[
            &dmatrix![1.0, 0.2; 0.2, 2.0],
            &DMatrix::zeros(2, 2),
            &dmatrix![3.0],
        ])
        .unwrap();
        let l = psd_sqrt_default(&c).unwrap();
        assert!(rel_frob(&(&l * l.transpose()), &c) < 1e-14);
        assert!(l.column(2).iter().all(|v| *v == 0.0));
        assert!(l.column(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn block_diag_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(block_diag(&[&i2]).unwrap(), i2);
        assert_eq!(
            block_diag(&[&i2, &dmatrix![4.0]]).unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 4.0]))
        );
        assert_eq!(
            block_diag(&[&dmatrix![2.0], &dmatrix![3.0], &dmatrix![5.0]]).unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0]))
        );
        assert_eq!(
            block_diag(&[]),
            Err(Error::EmptyInput("block_diag needs at least one block"))
        );
        assert!(block_diag(&[&DMatrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn marginal_examples() {
        let b = GaussianBelief::from_slices(
            &[1.0, 2.0, 3.0],
            &[4.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 6.0],
        )
        .unwrap();
        let m = extract_marginal(&b, IndexRange::new(0, 2)).unwrap();
        assert_eq!(m.mean.as_slice(), &[1.0, 2.0]);
        assert_eq!(m.cov, dmatrix![4.0, 0.0; 0.0, 5.0]);

        let b4 = GaussianBelief::new(
            DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]),
            DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 }),
        )
        .unwrap();
        assert_eq!(extract_marginal(&b4, IndexRange::new(0, 4)).unwrap(), b4);

        let b2 = GaussianBelief::from_slices(&[1.0, 2.0], &[2.0, 1.0, 1.0, 3.0]).unwrap();
        let m = extract_marginal(&b2, IndexRange::new(1, 1)).unwrap();
        assert_eq!(m.mean.as_slice(), &[2.0]);
        assert_eq!(m.cov, dmatrix![3.0]);

        assert!(matches!(
            extract_marginal(&b2, IndexRange::new(1, 2)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(extract_marginal(&b2, IndexRange::new(0, 0)).is_err());
    }

    #[test]
    fn belief_constructor_checks_shape() {
        assert!(GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(3, 3)).is_err());
        assert!(GaussianBelief::from_slices(&[0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
        let b = GaussianBelief::new(DVector::zeros(2), dmatrix![1.0, 0.3; 0.1, 1.0]).unwrap();
        assert_eq!(b.asymmetry(), 0.0);
        assert!(b.satisfies_invariants());
    }

    fn random_psd(dim: usize, entries: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |i, j| entries[i * 12 + j]);
        &a * a.transpose()
    }

    proptest! {
        #[test]
        fn sqrt_round_trip(dim in 1usize..=12, entries in prop::collection::vec(-3.0f64..3.0, 144)) {
            let c = random_psd(dim, &entries);
            let l = psd_sqrt_default(&c).unwrap();
            prop_assert!(rel_frob(&(&l * l.transpose()), &c) <= 1e-10);
            let strictly_upper_zero = (0..dim).all(|i| ((i + 1)..dim).all(|j| l[(i, j)] == 0.0));
            prop_assert!(strictly_upper_zero);
        }

        #[test]
        fn rank_deficient_round_trip(dim in 2usize..=12, rank in 1usize..=11, entries in prop::collection::vec(-3.0f64..3.0, 144)) {
            let rank = rank.min(dim - 1);
            let a = DMatrix::from_fn(dim, rank, |i, j| entries[i * 12 + j]);
            let c = &a * a.transpose();
            let l = psd_sqrt_default(&c).unwrap();
            prop_assert!(rel_frob(&(&l * l.transpose()), &c) <= 1e-8);
        }

        #[test]
        fn marginal_of_block_diag_is_block(d1 in 1usize..=4, d2 in 1usize..=4, entries in prop::collection::vec(-3.0f64..3.0, 144)) {
            let b1 = random_psd(d1, &entries);
            let b2 = random_psd(d2, &entries[1..]);
            let joint = GaussianBelief::new(
                DVector::from_fn(d1 + d2, |i, _| i as f64),
                block_diag(&[&b1, &b2]).unwrap(),
            ).unwrap();
            let m1 = extract_marginal(&joint, IndexRange::new(0, d1)).unwrap();
            let m2 = extract_marginal(&joint, IndexRange::new(d1, d2)).unwrap();
            let mut s1 = b1.clone();
            symmetrize(&mut s1);
            let mut s2 = b2.clone();
            symmetrize(&mut s2);
            prop_assert_eq!(&m1.cov, &s1);
            prop_assert_eq!(&m2.cov, &s2);
            prop_assert!(m1.satisfies_invariants() && m2.satisfies_invariants());
        }
    }
}
