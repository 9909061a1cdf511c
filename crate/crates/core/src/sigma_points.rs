//! Sigma points, the unscented transformation, and the sigma-point
//! measurement update.
//!
//! Uses the symmetric `2J + 1` construction with scaling parameters
//! `(alpha, beta, kappa)`:
//!
//! - `x⁰ = μ`, `xʲ = μ ± √(J + λ) Lⱼ` with `L Lᵀ = C` and `λ = α²(J + κ) − J`
//! - `w_m⁰ = λ / (J + λ)`, `w_c⁰ = w_m⁰ + 1 − α² + β`
//! - `w_mʲ = w_cʲ = 1 / (2(J + λ))` for `j ≥ 1`

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{psd_sqrt_default, symmetrize, GaussianBelief};

/// Innovation covariances with a larger condition estimate are treated as singular.
pub const MAX_INNOVATION_CONDITION: f64 = 1e14;

/// Spread and weighting parameters of the sigma point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl UTParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64) -> Self {
        Self { alpha, beta, kappa }
    }

    /// `alpha = 1`, `beta = 2`, `kappa = max(0, 3 − J)`.
    ///
    /// Keeps `λ ≥ 0`, so every non-central weight is positive.
    pub fn default_for_dim(dim: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: (3.0 - dim as f64).max(0.0),
        }
    }

    pub fn lambda(&self, dim: usize) -> f64 {
        let j = dim as f64;
        self.alpha * self.alpha * (j + self.kappa) - j
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParams(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        let spread = dim as f64 + self.lambda(dim);
        if !(spread > 0.0) || !spread.is_finite() {
            return Err(Error::InvalidParams(format!(
                "J + lambda must be positive, got {spread} for J = {dim}"
            )));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(Error::InvalidParams("beta and kappa must be finite".into()));
        }
        Ok(())
    }
}

/// Default tuning for a state of dimension `dim`.
pub fn default_params(dim: usize) -> UTParams {
    UTParams::default_for_dim(dim)
}

/// Deterministic sample set with separate mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.wm)
    }

    pub fn weighted_cov(&self) -> DMatrix<f64> {
        let mean = self.weighted_mean();
        let mut cov = weighted_cross(&self.points, &mean, &self.points, &mean, &self.wc);
        symmetrize(&mut cov);
        cov
    }
}

/// Generates `2J + 1` sigma points for `N(mu, cov)`.
pub fn generate(mu: &DVector<f64>, cov: &DMatrix<f64>, params: &UTParams) -> Result<SigmaPointSet> {
    let dim = mu.len();
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::DimensionMismatch {
            context: "sigma point covariance vs mean",
            expected: dim,
            got: cov.nrows(),
        });
    }
    if dim == 0 {
        return Err(Error::EmptyInput("sigma points need a non-empty state"));
    }
    params.validate(dim)?;

    let lambda = params.lambda(dim);
    let spread = dim as f64 + lambda;
    let root = psd_sqrt_default(cov)? * spread.sqrt();

    let mut points = Vec::with_capacity(2 * dim + 1);
    points.push(mu.clone());
    for i in 0..dim {
        points.push(mu + root.column(i));
    }
    for i in 0..dim {
        points.push(mu - root.column(i));
    }

    let w0 = lambda / spread;
    let wi = 0.5 / spread;
    let mut wm = vec![wi; 2 * dim + 1];
    let mut wc = vec![wi; 2 * dim + 1];
    wm[0] = w0;
    wc[0] = w0 + (1.0 - params.alpha * params.alpha + params.beta);
    Ok(SigmaPointSet { points, wm, wc })
}

/// Moments of `y = H(x)` approximated from transformed sigma points.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Cross-covariance between the input and output, `dim_x × dim_y`.
    pub cross_cov: DMatrix<f64>,
}

/// Propagates every sigma point through `h` and recombines the moments.
pub fn unscented_transform<F>(set: &SigmaPointSet, h: F) -> Result<TransformedMoments>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if set.is_empty() {
        return Err(Error::EmptyInput("unscented transform of an empty set"));
    }
    let ys: Vec<DVector<f64>> = set.points.iter().map(&h).collect();
    let out_dim = ys[0].len();
    if let Some(bad) = ys.iter().find(|y| y.len() != out_dim) {
        return Err(Error::DimensionMismatch {
            context: "measurement function output length",
            expected: out_dim,
            got: bad.len(),
        });
    }

    let mean_x = weighted_mean(&set.points, &set.wm);
    let mean_y = weighted_mean(&ys, &set.wm);
    let mut cov = weighted_cross(&ys, &mean_y, &ys, &mean_y, &set.wc);
    symmetrize(&mut cov);
    let cross_cov = weighted_cross(&set.points, &mean_x, &ys, &mean_y, &set.wc);
    Ok(TransformedMoments {
        mean: mean_y,
        cov,
        cross_cov,
    })
}

/// Linear-Gaussian style update using sigma-point moments.
///
/// `K = C_xy (C_y + C_n)⁻¹`, `μ' = μ + K (z − μ_y)`, `C' = C − K (C_y + C_n) Kᵀ`.
pub fn update_from_moments(
    prior: &GaussianBelief,
    moments: &TransformedMoments,
    noise_cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<GaussianBelief> {
    let m = moments.mean.len();
    if noise_cov.nrows() != m || noise_cov.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "noise covariance vs measurement dimension",
            expected: m,
            got: noise_cov.nrows(),
        });
    }
    if z.len() != m {
        return Err(Error::DimensionMismatch {
            context: "observation vs measurement dimension",
            expected: m,
            got: z.len(),
        });
    }
    if moments.cross_cov.nrows() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "cross-covariance rows vs prior dimension",
            expected: prior.dim(),
            got: moments.cross_cov.nrows(),
        });
    }

    let mut innovation = &moments.cov + noise_cov;
    symmetrize(&mut innovation);
    check_conditioning(&innovation)?;
    let chol = innovation
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation {
            condition: f64::INFINITY,
        })?;
    // K = C_xy S⁻¹  ⇔  Kᵀ = S⁻¹ C_xyᵀ
    let gain = chol.solve(&moments.cross_cov.transpose()).transpose();

    let mean = &prior.mean + &gain * (z - &moments.mean);
    let mut cov = &prior.cov - &gain * &innovation * gain.transpose();
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Sigma-point approximation of the posterior of `x` given `z = H(x) + n`.
pub fn sp_measurement_update<F>(
    prior: &GaussianBelief,
    h: F,
    noise_cov: &DMatrix<f64>,
    z: &DVector<f64>,
    params: &UTParams,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let set = generate(&prior.mean, &prior.cov, params)?;
    let moments = unscented_transform(&set, h)?;
    update_from_moments(prior, &moments, noise_cov, z)
}

fn check_conditioning(s: &DMatrix<f64>) -> Result<()> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation {
            condition: f64::INFINITY,
        });
    }
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    // unit floor on the scale, as in the pivot tolerance
    let max = eig.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let min = eig.min();
    if min <= 0.0 {
        return Err(Error::SingularInnovation {
            condition: f64::INFINITY,
        });
    }
    let condition = max / min;
    if condition > MAX_INNOVATION_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    Ok(())
}

fn weighted_mean(points: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let mut acc = DVector::zeros(points[0].len());
    for (p, wj) in points.iter().zip(w) {
        acc.axpy(*wj, p, 1.0);
    }
    acc
}

fn weighted_cross(
    a: &[DVector<f64>],
    mean_a: &DVector<f64>,
    b: &[DVector<f64>],
    mean_b: &DVector<f64>,
    w: &[f64],
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(mean_a.len(), mean_b.len());
    for ((pa, pb), wj) in a.iter().zip(b).zip(w) {
        let da = pa - mean_a;
        let db = pb - mean_b;
        acc.ger(*wj, &da, &db, 1.0);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn default_param_examples() {
        assert_eq!(default_params(1), UTParams::new(1.0, 2.0, 2.0));
        assert_eq!(default_params(12), UTParams::new(1.0, 2.0, 0.0));
        assert_eq!(default_params(3), UTParams::new(1.0, 2.0, 0.0));
        for j in 1..=20 {
            assert!(default_params(j).lambda(j) >= 0.0);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(UTParams::new(0.0, 2.0, 0.0).validate(2).is_err());
        assert!(UTParams::new(-1.0, 2.0, 0.0).validate(2).is_err());
        // J + lambda = alpha^2 (J + kappa) = 0
        assert!(UTParams::new(1.0, 2.0, -2.0).validate(2).is_err());
        let err = generate(
            &dvector![0.0, 0.0],
            &DMatrix::identity(2, 2),
            &UTParams::new(1.0, 2.0, -2.0),
        );
        assert!(matches!(err, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn scalar_standard_normal_points() {
        // Hand-derived: J = 1, lambda = 2, J + lambda = 3.
        let set = generate(&dvector![0.0], &dmatrix![1.0], &default_params(1)).unwrap();
        let s3 = 3.0_f64.sqrt();
        let pts: Vec<f64> = set.points.iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, s3, -s3]);
        let expect_wm = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        let expect_wc = [8.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for j in 0..3 {
            assert!((set.wm[j] - expect_wm[j]).abs() < 1e-15);
            assert!((set.wc[j] - expect_wc[j]).abs() < 1e-15);
        }
        // reconstruction identity on the frozen values
        assert!(set.weighted_mean()[0].abs() < 1e-15);
        assert!((set.weighted_cov()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let set = generate(&dvector![5.0], &dmatrix![0.0], &default_params(1)).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.points.iter().all(|p| p[0] == 5.0));
    }

    #[test]
    fn square_of_standard_normal() {
        let set = generate(&dvector![0.0], &dmatrix![1.0], &default_params(1)).unwrap();
        let m = unscented_transform(&set, |x| dvector![x[0] * x[0]]).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ragged_outputs_rejected() {
        let set = generate(&dvector![0.0], &dmatrix![1.0], &default_params(1)).unwrap();
        let r = unscented_transform(&set, |x| {
            if x[0] > 0.0 {
                dvector![x[0], 1.0]
            } else {
                dvector![x[0]]
            }
        });
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn scalar_update_example() {
        let prior = GaussianBelief::from_slices(&[0.0], &[1.0]).unwrap();
        let post = sp_measurement_update(
            &prior,
            |x| x.clone(),
            &dmatrix![1.0],
            &dvector![2.0],
            &default_params(1),
        )
        .unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-14);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn difference_measurement_example() {
        let prior = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let post = sp_measurement_update(
            &prior,
            |x| dvector![x[0] - x[1]],
            &dmatrix![1.0],
            &dvector![1.0],
            &default_params(2),
        )
        .unwrap();
        let third = 1.0 / 3.0;
        assert!((post.mean - dvector![third, -third]).norm() < 1e-14);
        assert!(rel(&post.cov, &dmatrix![2.0 * third, third; third, 2.0 * third]) < 1e-14);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let prior = GaussianBelief::from_slices(&[1.0, -2.0], &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let z = dvector![1.0 + 2.0 * -2.0];
        let post = sp_measurement_update(
            &prior,
            |x| dvector![x[0] + 2.0 * x[1]],
            &dmatrix![0.5],
            &z,
            &default_params(2),
        )
        .unwrap();
        assert!((&post.mean - &prior.mean).norm() < 1e-12);
        let shrink = GaussianBelief::new(DVector::zeros(2), &prior.cov - &post.cov).unwrap();
        assert!(shrink.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn singular_innovation_reported() {
        let prior = GaussianBelief::point(dvector![1.0, 2.0]);
        let r = sp_measurement_update(
            &prior,
            |x| dvector![x[0]],
            &dmatrix![0.0],
            &dvector![1.0],
            &default_params(2),
        );
        assert!(matches!(r, Err(Error::SingularInnovation { .. })));
    }

    #[test]
    fn negative_center_weight_is_accepted() {
        // alpha = 0.5 gives a negative w_c⁰; results are still symmetric
        let p = UTParams::new(0.5, 2.0, 0.0);
        let mu = dvector![1.0, 2.0, 3.0];
        let c = dmatrix![2.0, 0.3, 0.0; 0.3, 1.0, 0.2; 0.0, 0.2, 0.5];
        let set = generate(&mu, &c, &p).unwrap();
        assert!(set.wc[0] < 0.0);
        let m = unscented_transform(&set, |x| dvector![x[0] * x[1], x[2].sin()]).unwrap();
        assert_eq!(crate::gaussian::max_asymmetry(&m.cov), 0.0);
    }

    fn psd_from(dim: usize, e: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |i, j| e[i * 12 + j]);
        &a * a.transpose()
    }

    proptest! {
        #[test]
        fn reconstruction(dim in 1usize..=12, e in prop::collection::vec(-2.0f64..2.0, 156)) {
            let c = psd_from(dim, &e);
            let mu = DVector::from_fn(dim, |i, _| e[144 + i] * 10.0);
            let set = generate(&mu, &c, &default_params(dim)).unwrap();
            prop_assert_eq!(set.len(), 2 * dim + 1);
            prop_assert!((set.wm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let m = unscented_transform(&set, |x| x.clone()).unwrap();
            prop_assert!((&m.mean - &mu).norm() / mu.norm().max(1.0) < 1e-10);
            prop_assert!(rel(&m.cov, &c) < 1e-10);
            prop_assert!(rel(&m.cross_cov, &c) < 1e-10);
        }

        #[test]
        fn linear_map_is_exact(dim in 1usize..=8, out in 1usize..=4, e in prop::collection::vec(-2.0f64..2.0, 200)) {
            let c = psd_from(dim, &e);
            let mu = DVector::from_fn(dim, |i, _| e[144 + i]);
            let a = DMatrix::from_fn(out, dim, |i, j| e[160 + i * 8 + j]);
            let set = generate(&mu, &c, &default_params(dim)).unwrap();
            let m = unscented_transform(&set, |x| &a * x).unwrap();
            prop_assert!((&m.mean - &a * &mu).norm() / (&a * &mu).norm().max(1.0) < 1e-10);
            prop_assert!(rel(&m.cov, &(&a * &c * a.transpose())) < 1e-10);
            prop_assert!(rel(&m.cross_cov, &(&c * a.transpose())) < 1e-10);
        }
    }
}
