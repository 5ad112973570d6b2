//! Cornering-stiffness identification by regularized, exponentially weighted
//! least squares.
//!
//! The regression stacks the yaw-moment balance and the lateral force balance:
//!
//! ```text
//! Y = [I_z r_dot, m a_y_sen]ᵀ = Φᵀ [C_f, C_r]ᵀ
//! ```
//!
//! with the lateral velocity inside `Φ` taken from the kinematics observer.
//! Estimates are kept as a deviation `theta_tilde` from the nominal stiffness
//! vector, which is also the regularization target.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SensorSample, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Forgetting factor.
    pub lambda: f64,
    /// Regularization weight pulling toward the nominal stiffness.
    pub delta: f64,
    /// Yaw-rate magnitude that opens the adaptation gate, rad/s.
    pub r_t: f64,
    /// Maximum accepted `|Φᵀ(2,1) / Φᵀ(2,2)|` ratio (and its inverse).
    pub c_t: f64,
    /// Cutoff of the low-pass filter on the differentiated yaw rate, Hz.
    pub yaw_accel_cutoff_hz: f64,
    /// Lower clamp on handed-over stiffness, as a fraction of nominal.
    pub clamp_min: f64,
    /// Upper clamp on handed-over stiffness, as a fraction of nominal.
    pub clamp_max: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.975,
            delta: 0.02,
            r_t: 0.1,
            c_t: 20.0,
            yaw_accel_cutoff_hz: 10.0,
            clamp_min: 0.1,
            clamp_max: 3.0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("adaptation: {msg}")));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.r_t > 0.0) {
            return bad("r_t must be positive");
        }
        if !(self.c_t > 1.0) {
            return bad("c_t must exceed 1");
        }
        if !(self.yaw_accel_cutoff_hz > 0.0) {
            return bad("yaw_accel_cutoff_hz must be positive");
        }
        if !(self.clamp_min > 0.0 && self.clamp_max > self.clamp_min) {
            return bad("clamp bounds must satisfy 0 < clamp_min < clamp_max");
        }
        Ok(())
    }
}

/// Yaw acceleration from a backward difference passed through a first-order
/// low-pass filter. Returns the filtered value, which is also the new filter
/// state.
pub fn yaw_accel_estimate(r_now: f64, r_prev: f64, dt: f64, cutoff_hz: f64, filter_state: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTimeStep(dt));
    }
    let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
    let alpha = dt / (tau + dt);
    let raw = (r_now - r_prev) / dt;
    Ok(filter_state + alpha * (raw - filter_state))
}

/// One row pair of the stiffness regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSample {
    /// `Φᵀ` (rows: yaw balance, lateral balance; columns: `C_f`, `C_r`).
    pub phi_t: Matrix2<f64>,
    pub y: Vector2<f64>,
}

impl RegressionSample {
    pub fn phi(&self) -> Matrix2<f64> {
        self.phi_t.transpose()
    }

    /// `Y - Φᵀ θ⁺`.
    pub fn y_tilde(&self, theta_plus: &Vector2<f64>) -> Vector2<f64> {
        self.y - self.phi_t * theta_plus
    }
}

pub fn build_regression(
    s: &SensorSample,
    v_y_hat_k: f64,
    r_dot: f64,
    params: &VehicleParams,
    v_x_min: f64,
) -> Result<RegressionSample> {
    if !(s.v_x >= v_x_min && s.v_x > 0.0) {
        return Err(Error::SpeedTooLow(s.v_x, v_x_min));
    }
    let (l_f, l_r, r, v_x) = (params.l_f, params.l_r, s.r, s.v_x);
    let phi_t = Matrix2::new(
        (-l_f * l_f * r - l_f * v_y_hat_k) / v_x + l_f * s.delta_f,
        (-l_r * l_r * r + l_r * v_y_hat_k) / v_x,
        (-l_f * r - v_y_hat_k) / v_x + s.delta_f,
        (l_r * r - v_y_hat_k) / v_x,
    );
    let y = Vector2::new(params.i_z * r_dot, params.m * s.a_y_sen);
    Ok(RegressionSample { phi_t, y })
}

/// Closed-form regularized weighted least-squares solution over all samples,
/// the last sample having weight 1.
pub fn batch_rwls(samples: &[RegressionSample], cfg: &AdaptationConfig, theta_plus: &Vector2<f64>) -> Vector2<f64> {
    let k = samples.len();
    let mut info = Matrix2::identity() * cfg.delta;
    let mut rhs = theta_plus * cfg.delta;
    for (i, s) in samples.iter().enumerate() {
        let w = cfg.lambda.powi((k - 1 - i) as i32);
        let phi = s.phi();
        info += phi * phi.transpose() * w;
        rhs += phi * s.y * w;
    }
    info.lu().solve(&rhs).expect("delta > 0 keeps the information matrix invertible")
}

/// Recursive estimator state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationState {
    /// Deviation from nominal, N/rad.
    pub theta_tilde: Vector2<f64>,
    /// Exponentially weighted information matrix `R`.
    pub info: Matrix2<f64>,
    /// `θ⁺ + theta_tilde`, unclamped.
    pub theta_star: Vector2<f64>,
    pub steps: u64,
}

impl AdaptationState {
    pub fn new(theta_plus: Vector2<f64>) -> Self {
        Self {
            theta_tilde: Vector2::zeros(),
            info: Matrix2::zeros(),
            theta_star: theta_plus,
            steps: 0,
        }
    }

    /// `(R + δI)⁻¹`.
    pub fn gain(&self, delta: f64) -> Matrix2<f64> {
        (self.info + Matrix2::identity() * delta)
            .try_inverse()
            .expect("delta > 0 keeps R + δI invertible")
    }
}

/// One step of the recursive law; identical to [`batch_rwls`] over the same
/// sample history.
pub fn recursive_rwls_step(
    state: &AdaptationState,
    sample: &RegressionSample,
    cfg: &AdaptationConfig,
    theta_plus: &Vector2<f64>,
) -> AdaptationState {
    let phi = sample.phi();
    let info = state.info * cfg.lambda + phi * phi.transpose();
    let e = sample.y_tilde(theta_plus) - sample.phi_t * state.theta_tilde;
    let rhs = state.theta_tilde * (cfg.delta * (cfg.lambda - 1.0)) + phi * e;
    let step = (info + Matrix2::identity() * cfg.delta)
        .lu()
        .solve(&rhs)
        .expect("delta > 0 keeps R + δI invertible");
    let theta_tilde = state.theta_tilde + step;
    AdaptationState {
        theta_tilde,
        info,
        theta_star: theta_plus + theta_tilde,
        steps: state.steps + 1,
    }
}

/// Accepts a sample when `1/c_t <= |Φᵀ(2,1) / Φᵀ(2,2)| <= c_t`.
pub fn conditioning_gate(sample: &RegressionSample, c_t: f64) -> bool {
    let den = sample.phi_t[(1, 1)];
    if den == 0.0 {
        return false;
    }
    let ratio = (sample.phi_t[(1, 0)] / den).abs();
    ratio.is_finite() && ratio >= 1.0 / c_t && ratio <= c_t
}

/// Clamps each stiffness into `[clamp_min, clamp_max] × nominal`. The flag is
/// set when any component was moved.
pub fn clamp_stiffness(theta: &Vector2<f64>, theta_plus: &Vector2<f64>, cfg: &AdaptationConfig) -> (Vector2<f64>, bool) {
    let mut out = *theta;
    let mut clamped = false;
    for i in 0..2 {
        let lo = cfg.clamp_min * theta_plus[i];
        let hi = cfg.clamp_max * theta_plus[i];
        let v = if out[i].is_nan() { theta_plus[i] } else { out[i].clamp(lo, hi) };
        clamped |= v != out[i];
        out[i] = v;
    }
    (out, clamped)
}
