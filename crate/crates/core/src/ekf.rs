//! Discrete Kalman update for models that are relinearized every step.
//!
//! The observer models are linear in the state once the measured speed and
//! yaw rate are substituted, so the "extended" filter is a time-varying linear
//! filter: predict with `(A, B)` built for the current step, then correct with
//! `(C, D)` of the same model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::StateSpace;

/// Mean and covariance of an observer.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Number of updates applied.
    pub k: u64,
}

impl ObserverState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != x.len() || p.ncols() != x.len() {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a {}-state mean",
                p.nrows(),
                p.ncols(),
                x.len()
            )));
        }
        Ok(Self { x, p, k: 0 })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Process (`w`) and measurement (`v`) noise covariances of the discrete model.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl NoiseConfig {
    pub fn diagonal(w: &[f64], v: &[f64]) -> Self {
        Self {
            w: DMatrix::from_diagonal(&DVector::from_column_slice(w)),
            v: DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: &self.w * factor,
            v: &self.v * factor,
        }
    }
}

/// Returns `(P + Pᵀ) / 2`.
pub fn covariance_symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

fn check_dims(
    state: &ObserverState,
    ss: &StateSpace,
    u_prev: &DVector<f64>,
    u_now: &DVector<f64>,
    y_now: &DVector<f64>,
    noise: &NoiseConfig,
) -> Result<()> {
    let n = ss.states();
    let checks = [
        ("state", state.dim(), n),
        ("u_prev", u_prev.len(), ss.inputs()),
        ("u_now", u_now.len(), ss.inputs()),
        ("y", y_now.len(), ss.outputs()),
        ("W rows", noise.w.nrows(), n),
        ("W cols", noise.w.ncols(), n),
        ("V rows", noise.v.nrows(), ss.outputs()),
        ("V cols", noise.v.ncols(), ss.outputs()),
    ];
    for (what, got, want) in checks {
        if got != want {
            return Err(Error::Dimension(format!("{what}: got {got}, expected {want}")));
        }
    }
    Ok(())
}

/// One predict/correct cycle.
///
/// `ss` must already be discretized. Prediction uses `u_prev`; the measurement
/// feedthrough uses `u_now`. The covariance is corrected in Joseph form and
/// symmetrized.
pub fn ekf_update(
    state: &ObserverState,
    ss: &StateSpace,
    u_prev: &DVector<f64>,
    u_now: &DVector<f64>,
    y_now: &DVector<f64>,
    noise: &NoiseConfig,
) -> Result<ObserverState> {
    check_dims(state, ss, u_prev, u_now, y_now, noise)?;
    let n = ss.states();

    let x_pred = &ss.a * &state.x + &ss.b * u_prev;
    let p_pred = &ss.a * &state.p * ss.a.transpose() + &noise.w;

    let innovation = y_now - ss.output(&x_pred, u_now);
    let pct = &p_pred * ss.c.transpose();
    let s = &ss.c * &pct + &noise.v;
    let s = covariance_symmetrize(&s);
    // Cholesky only as the definiteness check; the small closed-form inverse
    // keeps hand-computable cases exact.
    if s.clone().cholesky().is_none() {
        return Err(Error::SingularInnovation);
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let gain = pct * s_inv;

    let x = x_pred + &gain * innovation;
    let i_kc = DMatrix::identity(n, n) - &gain * &ss.c;
    let p = &i_kc * p_pred * i_kc.transpose() + &gain * &noise.v * gain.transpose();

    Ok(ObserverState {
        x,
        p: covariance_symmetrize(&p),
        k: state.k + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, c: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn scalar_worked_example() {
        let ss = scalar(1.0, 0.0, 1.0);
        let st = ObserverState::new(v1(0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let noise = NoiseConfig::diagonal(&[0.0], &[1.0]);
        let out = ekf_update(&st, &ss, &v1(0.0), &v1(0.0), &v1(1.0), &noise).unwrap();
        assert_eq!(out.x[0], 0.5);
        assert_eq!(out.p[(0, 0)], 0.5);
        assert_eq!(out.k, 1);
    }

    #[test]
    fn huge_measurement_noise_ignores_measurement() {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.01, -0.02, 0.99]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.01]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let st = ObserverState::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::identity(2, 2)).unwrap();
        let noise = NoiseConfig {
            w: DMatrix::zeros(2, 2),
            v: DMatrix::identity(1, 1) * 1e12,
        };
        let out = ekf_update(&st, &ss, &v1(3.0), &v1(3.0), &v1(100.0), &noise).unwrap();
        let pred = &ss.a * &st.x + &ss.b * v1(3.0);
        assert_relative_eq!(out.x, pred, epsilon = 1e-9);
    }

    #[test]
    fn zero_innovation_keeps_predicted_mean() {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 1, &[2.0]),
        )
        .unwrap();
        let st = ObserverState::new(DVector::from_vec(vec![0.3, -0.7]), DMatrix::identity(2, 2)).unwrap();
        let u_prev = v1(0.2);
        let u_now = v1(-0.4);
        let pred = &ss.a * &st.x + &ss.b * &u_prev;
        let y = ss.output(&pred, &u_now);
        let noise = NoiseConfig::diagonal(&[0.1, 0.1], &[0.5]);
        let out = ekf_update(&st, &ss, &u_prev, &u_now, &y, &noise).unwrap();
        assert_eq!(out.x, pred);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let ss = scalar(1.0, 0.0, 1.0);
        let st = ObserverState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let noise = NoiseConfig::diagonal(&[0.0], &[1.0]);
        assert!(matches!(
            ekf_update(&st, &ss, &v1(0.0), &v1(0.0), &v1(0.0), &noise),
            Err(Error::Dimension(_))
        ));
        assert!(ObserverState::new(DVector::zeros(2), DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn degenerate_innovation_covariance_is_an_error() {
        let ss = scalar(1.0, 0.0, 1.0);
        let st = ObserverState::new(v1(0.0), DMatrix::zeros(1, 1)).unwrap();
        let noise = NoiseConfig::diagonal(&[0.0], &[0.0]);
        assert!(matches!(
            ekf_update(&st, &ss, &v1(0.0), &v1(0.0), &v1(1.0), &noise),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn symmetrize_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(covariance_symmetrize(&p), DMatrix::from_element(2, 2, 1.0));
        let s = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 2.0]);
        assert_eq!(covariance_symmetrize(&s), s);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 5.0, -2.0, 0.5, 7.0, 3.0, 9.0, 1.0, 2.0]);
        let out = covariance_symmetrize(&q);
        assert_eq!(&out - out.transpose(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn innovations_vanish_on_matched_plant() {
        // Rotating 2-state plant, exact model, no noise realization.
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.995, 0.05, -0.05, 0.995]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.01]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let noise = NoiseConfig::diagonal(&[1e-3, 1e-3], &[1e-2]);
        let mut plant = DVector::from_vec(vec![2.0, -1.0]);
        let mut st = ObserverState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..3000 {
            let u_prev = v1((k as f64 * 0.01).sin());
            plant = &ss.a * plant + &ss.b * &u_prev;
            let y = ss.output(&plant, &v1(0.0));
            let pred = &ss.a * &st.x + &ss.b * &u_prev;
            last = (&y - ss.output(&pred, &v1(0.0))).amax();
            st = ekf_update(&st, &ss, &u_prev, &v1(0.0), &y, &noise).unwrap();
        }
        assert!(last < 1e-8, "innovation {last}");
    }
}
