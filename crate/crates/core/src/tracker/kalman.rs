//! Constant-velocity Kalman filter over ground-plane position.
//!
//! State is `(x, y, vx, vy)` in meters and meters per frame; observations are
//! `(x, y)` positions.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::{Error, Result};

/// Chi-square 0.95 quantile with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl KalmanState {
    pub fn position(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }
}

/// Noise model, all entries are variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub process_noise: Vector4<f64>,
    pub observation_noise: Vector2<f64>,
    pub initial_covariance: Vector4<f64>,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise: Vector4::new(0.05 * 0.05, 0.05 * 0.05, 0.1 * 0.1, 0.1 * 0.1),
            observation_noise: Vector2::new(0.1 * 0.1, 0.1 * 0.1),
            initial_covariance: Vector4::new(1.0, 1.0, 4.0, 4.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter {
    params: KalmanParams,
    motion: Matrix4<f64>,
    observation: Matrix2x4<f64>,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        Self::new(KalmanParams::default())
    }
}

impl KalmanFilter {
    pub fn new(params: KalmanParams) -> Self {
        #[rustfmt::skip]
        let motion = Matrix4::new(
            1.0, 0.0, 1.0, 0.0,
            0.0, 1.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let observation = Matrix2x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        );
        Self {
            params,
            motion,
            observation,
        }
    }

    pub fn params(&self) -> &KalmanParams {
        &self.params
    }

    /// New state at an observed position with zero velocity.
    pub fn initiate(&self, x: f64, y: f64) -> KalmanState {
        KalmanState {
            mean: Vector4::new(x, y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&self.params.initial_covariance),
        }
    }

    pub fn predict(&self, s: &KalmanState) -> KalmanState {
        let f = &self.motion;
        KalmanState {
            mean: f * s.mean,
            covariance: f * s.covariance * f.transpose()
                + Matrix4::from_diagonal(&self.params.process_noise),
        }
    }

    fn innovation(&self, s: &KalmanState, x: f64, y: f64) -> (Vector2<f64>, Matrix2<f64>) {
        let h = &self.observation;
        let residual = Vector2::new(x, y) - h * s.mean;
        let cov = h * s.covariance * h.transpose()
            + Matrix2::from_diagonal(&self.params.observation_noise);
        (residual, cov)
    }

    /// Corrects `s` with an observed position. The covariance update uses the
    /// Joseph form and is re-symmetrized.
    pub fn update(&self, s: &KalmanState, x: f64, y: f64) -> Result<KalmanState> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidConfig("observation must be finite"));
        }
        let (residual, cov) = self.innovation(s, x, y);
        let cov_inv = cov.try_inverse().ok_or(Error::NumericalBreakdown)?;
        let h = &self.observation;
        let gain: Matrix4x2<f64> = s.covariance * h.transpose() * cov_inv;
        let mean = s.mean + gain * residual;
        let i_kh = Matrix4::identity() - gain * h;
        let r = Matrix2::from_diagonal(&self.params.observation_noise);
        let p = i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose();
        let covariance = (p + p.transpose()) * 0.5;
        if covariance.cholesky().is_none() {
            return Err(Error::NumericalBreakdown);
        }
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance of an observed position from the
    /// projected state.
    pub fn mahalanobis(&self, s: &KalmanState, x: f64, y: f64) -> Result<f64> {
        let (residual, cov) = self.innovation(s, x, y);
        let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
        let z = chol.l().solve_lower_triangular(&residual).ok_or(Error::SingularCovariance)?;
        Ok(z.norm_squared())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_moves_by_velocity() {
        let kf = KalmanFilter::default();
        let s = KalmanState {
            mean: Vector4::new(0.0, 0.0, 1.0, 0.0),
            covariance: Matrix4::identity(),
        };
        assert_eq!(kf.predict(&s).position(), (1.0, 0.0));
    }

    #[test]
    fn zero_velocity_grows_covariance_by_process_noise() {
        let kf = KalmanFilter::default();
        let s = KalmanState {
            mean: Vector4::new(2.0, 3.0, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 0.0, 0.0)),
        };
        let p = kf.predict(&s);
        assert_eq!(p.position(), (2.0, 3.0));
        let q = Matrix4::from_diagonal(&kf.params().process_noise);
        assert!((p.covariance - s.covariance - q).amax() < 1e-15);
    }

    #[test]
    fn observation_at_prediction_keeps_position() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&kf.initiate(1.0, -2.0));
        let u = kf.update(&s, 1.0, -2.0).unwrap();
        assert_eq!(u.position(), (1.0, -2.0));
    }

    #[test]
    fn vanishing_observation_noise_snaps_to_observation() {
        let mut params = KalmanParams::default();
        params.observation_noise = Vector2::new(1e-14, 1e-14);
        let kf = KalmanFilter::new(params);
        let s = kf.predict(&kf.initiate(0.0, 0.0));
        let u = kf.update(&s, 3.0, 4.0).unwrap();
        assert!((u.mean[0] - 3.0).abs() < 1e-9 && (u.mean[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_unit_case() {
        let params = KalmanParams {
            observation_noise: Vector2::new(0.5, 0.5),
            ..KalmanParams::default()
        };
        let kf = KalmanFilter::new(params);
        let s = KalmanState {
            mean: Vector4::zeros(),
            covariance: Matrix4::from_diagonal(&Vector4::new(0.5, 0.5, 1.0, 1.0)),
        };
        assert_eq!(kf.mahalanobis(&s, 0.0, 0.0).unwrap(), 0.0);
        assert!((kf.mahalanobis(&s, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_innovation() {
        let params = KalmanParams {
            observation_noise: Vector2::zeros(),
            ..KalmanParams::default()
        };
        let kf = KalmanFilter::new(params);
        let s = KalmanState {
            mean: Vector4::zeros(),
            covariance: Matrix4::zeros(),
        };
        assert_eq!(kf.mahalanobis(&s, 1.0, 0.0), Err(Error::SingularCovariance));
        assert_eq!(kf.update(&s, 1.0, 0.0), Err(Error::NumericalBreakdown));
    }

    /// Per-axis recursion on `(position, velocity)` as an independent oracle.
    #[test]
    fn two_updates_then_predict_matches_scalar_recursion() {
        let kf = KalmanFilter::default();
        let mut s = kf.initiate(0.0, 0.0);
        s = kf.predict(&s);
        s = kf.update(&s, 1.0, 0.0).unwrap();
        let next = kf.predict(&s);

        let (qp, r) = (0.05f64.powi(2), 0.1f64.powi(2));
        let (mut x, mut v) = (0.0f64, 0.0f64);
        let (pxx, pxv, pvv) = (1.0f64, 0.0f64, 4.0f64);
        // predict
        x += v;
        let (pxx, pxv) = (pxx + 2.0 * pxv + pvv + qp, pxv + pvv);
        // update with z = 1
        let s_in = pxx + r;
        let (kx, kv) = (pxx / s_in, pxv / s_in);
        let innov = 1.0 - x;
        x += kx * innov;
        v += kv * innov;
        // predict
        let pred_x = x + v;
        assert!((next.mean[0] - pred_x).abs() < 1e-12);
        assert!((next.mean[2] - v).abs() < 1e-12);
        assert_eq!(next.mean[1], 0.0);
        // Frozen value of the recursion: heads toward 2 from below.
        assert!((pred_x - 1.796_009_975_062_344).abs() < 1e-12, "{pred_x}");
    }
}
