use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, GaussianBelief};

/// Linear motion `x_i = G x_{i−1} + W u_i` with `u_i ~ N(0, σ_u² I₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub transition: Matrix4<f64>,
    pub noise_input: Matrix4x2<f64>,
    pub sigma_u2: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        default_motion_model()
    }
}

/// Constant-velocity model with unit sampling interval and `σ_u² = 1e-4`.
pub fn default_motion_model() -> MotionModel {
    constant_velocity(1.0, 1e-4)
}

/// Constant-velocity model for state `(x, y, vx, vy)` and interval `dt`.
pub fn constant_velocity(dt: f64, sigma_u2: f64) -> MotionModel {
    #[rustfmt::skip]
    let transition = Matrix4::new(
        1.0, 0.0, dt,  0.0,
        0.0, 1.0, 0.0, dt,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let h = 0.5 * dt * dt;
    #[rustfmt::skip]
    let noise_input = Matrix4x2::new(
        h,   0.0,
        0.0, h,
        dt,  0.0,
        0.0, dt,
    );
    MotionModel {
        transition,
        noise_input,
        sigma_u2,
    }
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_u2 >= 0.0) || !self.sigma_u2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma_u2 must be non-negative, got {}",
                self.sigma_u2
            )));
        }
        Ok(())
    }

    /// `σ_u² W Wᵀ`.
    pub fn process_noise(&self) -> Matrix4<f64> {
        self.noise_input * self.noise_input.transpose() * self.sigma_u2
    }

    pub fn propagate(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        self.transition * x + self.noise_input * u
    }
}

/// Exact moment propagation of a 4-D belief through the motion model.
pub fn predict_belief(b: &GaussianBelief, m: &MotionModel) -> Result<GaussianBelief> {
    if b.dim() != 4 {
        return Err(Error::DimensionMismatch {
            context: "motion model expects a 4-D state",
            expected: 4,
            got: b.dim(),
        });
    }
    let g = DMatrix::from_column_slice(4, 4, m.transition.as_slice());
    let mean: DVector<f64> = &g * &b.mean;
    let q = DMatrix::from_column_slice(4, 4, m.process_noise().as_slice());
    let mut cov = &g * &b.cov * g.transpose() + q;
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Location block of a 4-D state.
pub fn location(x: &Vector4<f64>) -> Vector2<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0) * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn noiseless_propagation() {
        let m = default_motion_model();
        let x = m.propagate(&Vector4::new(0.0, 0.0, 0.2, 1.0), &Vector2::zeros());
        assert_eq!(x, Vector4::new(0.2, 1.0, 0.2, 1.0));
    }

    #[test]
    fn zero_noise_moves_in_straight_lines() {
        let m = constant_velocity(1.0, 0.0);
        let start = Vector4::new(25.0, 50.0, 0.5, -0.8);
        let mut x = start;
        for i in 1..=50 {
            x = m.propagate(&x, &Vector2::zeros());
            let expect = location(&start) + Vector2::new(0.5, -0.8) * i as f64;
            assert!((location(&x) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn process_noise_matches_hand_product() {
        #[rustfmt::skip]
        let expect = Matrix4::new(
            0.25, 0.0,  0.5, 0.0,
            0.0,  0.25, 0.0, 0.5,
            0.5,  0.0,  1.0, 0.0,
            0.0,  0.5,  0.0, 1.0,
        ) * 1e-4;
        assert!((default_motion_model().process_noise() - expect).amax() < 1e-18);
    }

    #[test]
    fn predict_examples() {
        let m0 = constant_velocity(1.0, 0.0);
        let b = GaussianBelief::point(dvector![0.0, 0.0, 0.2, 1.0]);
        let p = predict_belief(&b, &m0).unwrap();
        assert_eq!(p.mean, dvector![0.2, 1.0, 0.2, 1.0]);
        assert_eq!(p.cov, DMatrix::zeros(4, 4));

        let b = GaussianBelief::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let p = predict_belief(&b, &m0).unwrap();
        let g = DMatrix::from_column_slice(4, 4, m0.transition.as_slice());
        assert_eq!(p.cov, &g * g.transpose());

        let still = MotionModel {
            transition: Matrix4::identity(),
            noise_input: Matrix4x2::zeros(),
            sigma_u2: 1.0,
        };
        let b = GaussianBelief::from_slices(
            &[1.0, 2.0, 3.0, 4.0],
            &[
                2.0, 0.1, 0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5,
            ],
        )
        .unwrap();
        assert_eq!(predict_belief(&b, &still).unwrap(), b);

        assert!(predict_belief(&GaussianBelief::point(dvector![1.0]), &m0).is_err());
    }
}
