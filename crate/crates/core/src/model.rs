//! Vehicle parameters and the continuous/discrete state-space models used by
//! the observers.
//!
//! Three model families live here:
//!
//! * the single-track (bicycle) lateral dynamics, augmented with the road bank
//!   term `sin(phi)` and the lateral accelerometer bias `d` as constant states,
//! * the planar point-mass kinematics with `sin(phi)` as a third state,
//! * the plain two-state kinematics fed with a bank/bias corrected lateral
//!   acceleration.
//!
//! Matrices are rebuilt at every sample from the measured speed and yaw rate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Physical constants of the single-track model.
///
/// Cornering stiffnesses are in N/rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass, kg.
    pub m: f64,
    /// Yaw moment of inertia, kg·m².
    pub i_z: f64,
    /// COG to front axle, m.
    pub l_f: f64,
    /// COG to rear axle, m.
    pub l_r: f64,
    /// Nominal front cornering stiffness, N/rad.
    pub c_f_nom: f64,
    /// Nominal rear cornering stiffness, N/rad.
    pub c_r_nom: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 2300.132,
            i_z: 4400.0,
            l_f: 1.505,
            l_r: 1.504,
            c_f_nom: 160_776.0,
            c_r_nom: 254_100.0,
            g: GRAVITY,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("i_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("c_f_nom", self.c_f_nom),
            ("c_r_nom", self.c_r_nom),
            ("g", self.g),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    /// Nominal stiffness vector `[C_f, C_r]`.
    pub fn nominal_stiffness(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.c_f_nom, self.c_r_nom)
    }
}

/// One sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    /// Time, s.
    pub t: f64,
    /// Longitudinal acceleration, m/s².
    pub a_x: f64,
    /// Lateral accelerometer reading including gravity component and bias, m/s².
    pub a_y_sen: f64,
    /// Yaw rate, rad/s.
    pub r: f64,
    /// Longitudinal speed, m/s.
    pub v_x: f64,
    /// Front wheel steering angle, rad.
    pub delta_f: f64,
}

impl SensorSample {
    pub fn is_finite(&self) -> bool {
        [self.t, self.a_x, self.a_y_sen, self.r, self.v_x, self.delta_f]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Linear (time-varying) state-space model `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} cols, expected {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }
}

fn check_speed(v_x: f64) -> Result<()> {
    if v_x > 0.0 && v_x.is_finite() {
        Ok(())
    } else {
        Err(Error::SpeedTooLow(v_x, 0.0))
    }
}

/// Linear lateral tire forces `(F_yf, F_yr)` for the given stiffnesses.
pub fn lateral_tire_forces_linear(
    params: &VehicleParams,
    c_f: f64,
    c_r: f64,
    v_y: f64,
    r: f64,
    v_x: f64,
    delta_f: f64,
) -> Result<(f64, f64)> {
    check_speed(v_x)?;
    let alpha_f = delta_f - (v_y + params.l_f * r) / v_x;
    let alpha_r = (-v_y + params.l_r * r) / v_x;
    Ok((c_f * alpha_f, c_r * alpha_r))
}

/// Two-state bicycle model over `[v_y, r]` with input `delta_f` and output
/// `[a_y, r]`.
pub fn dynamics_matrices(params: &VehicleParams, c_f: f64, c_r: f64, v_x: f64) -> Result<StateSpace> {
    check_speed(v_x)?;
    let VehicleParams { m, i_z, l_f, l_r, .. } = *params;
    let a11 = -(c_f + c_r) / (m * v_x);
    let a12_force = -(l_f * c_f - l_r * c_r) / (m * v_x);
    let a21 = (-l_f * c_f + l_r * c_r) / (i_z * v_x);
    let a22 = (-l_f * l_f * c_f - l_r * l_r * c_r) / (i_z * v_x);
    StateSpace::new(
        DMatrix::from_row_slice(2, 2, &[a11, -v_x + a12_force, a21, a22]),
        DMatrix::from_row_slice(2, 1, &[c_f / m, l_f * c_f / i_z]),
        DMatrix::from_row_slice(2, 2, &[a11, a12_force, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[c_f / m, 0.0]),
    )
}

/// Four-state bicycle model over `[v_y, r, sin(phi), d]` with input
/// `delta_f` and output `[a_y_sen, r]`. Bank and bias have zero dynamics.
pub fn dynamics_matrices_augmented(
    params: &VehicleParams,
    c_f: f64,
    c_r: f64,
    v_x: f64,
) -> Result<StateSpace> {
    let plain = dynamics_matrices(params, c_f, c_r, v_x)?;
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (2, 2)).copy_from(&plain.a);
    a[(0, 2)] = -params.g;
    let mut b = DMatrix::zeros(4, 1);
    b.view_mut((0, 0), (2, 1)).copy_from(&plain.b);
    let mut c = DMatrix::zeros(2, 4);
    c.view_mut((0, 0), (2, 2)).copy_from(&plain.c);
    c[(0, 3)] = 1.0;
    StateSpace::new(a, b, c, plain.d)
}

/// Three-state kinematics over `[v_x, v_y, sin(phi)]` with input
/// `[a_x, a_y_sen]` and output `v_x`.
pub fn kinematics_matrices_bank(r: f64, g: f64) -> StateSpace {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, r, 0.0, -r, 0.0, -g, 0.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    StateSpace::new(a, b, c, DMatrix::zeros(1, 2)).expect("static dimensions")
}

/// Two-state kinematics over `[v_x, v_y]` with input `[a_x, a_y_corrected]`
/// and output `v_x`.
pub fn kinematics_matrices_plain(r: f64) -> StateSpace {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, r, -r, 0.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    StateSpace::new(a, DMatrix::identity(2, 2), c, DMatrix::zeros(1, 2)).expect("static dimensions")
}

/// Forward-Euler discretization: `A_d = I + A dt`, `B_d = B dt`.
pub fn discretize_forward_euler(ss: &StateSpace, dt: f64) -> Result<StateSpace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveTimeStep(dt));
    }
    let n = ss.states();
    Ok(StateSpace {
        a: &ss.a * dt + DMatrix::identity(n, n),
        b: &ss.b * dt,
        c: ss.c.clone(),
        d: ss.d.clone(),
    })
}

/// Lateral acceleration with the estimated gravity component and bias removed.
pub fn corrected_lateral_accel(a_y_sen: f64, sin_phi_hat: f64, d_hat: f64, g: f64) -> f64 {
    a_y_sen - g * sin_phi_hat - d_hat
}

/// Bank angle from its sine, clamping the argument into `[-1, 1]`.
pub fn bank_angle(sin_phi: f64) -> f64 {
    sin_phi.clamp(-1.0, 1.0).asin()
}
