//! The dynamics observer over `[v_y, r, sin(phi), d]` and the two kinematics
//! observer variants, plus the kinematics reset from the dynamics estimate.
//!
//! Covariance entries named in the reset rule use the 1-based `P(1,1)`,
//! `P(3,3)` convention; in code those are `p[(0, 0)]` and `p[(2, 2)]`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::ekf::{ekf_update, NoiseConfig, ObserverState};
use crate::error::{Error, Result};
use crate::model::{
    discretize_forward_euler, dynamics_matrices_augmented, kinematics_matrices_bank,
    kinematics_matrices_plain, SensorSample, VehicleParams,
};

/// Four-state bicycle-model observer with bank and bias states.
#[derive(Debug, Clone)]
pub struct DynObserver {
    pub state: ObserverState,
    pub noise: NoiseConfig,
    pub params: VehicleParams,
    /// Cornering stiffnesses `[C_f, C_r]` used to build the model, N/rad.
    pub stiffness: Vector2<f64>,
    pub v_x_min: f64,
}

impl DynObserver {
    pub fn new(
        params: VehicleParams,
        noise: NoiseConfig,
        x0: DVector<f64>,
        p0: DMatrix<f64>,
        v_x_min: f64,
    ) -> Result<Self> {
        if x0.len() != 4 {
            return Err(Error::Dimension(format!("dynamics observer needs 4 states, got {}", x0.len())));
        }
        Ok(Self {
            state: ObserverState::new(x0, p0)?,
            noise,
            stiffness: params.nominal_stiffness(),
            params,
            v_x_min,
        })
    }

    pub fn v_y(&self) -> f64 {
        self.state.x[0]
    }

    pub fn yaw_rate(&self) -> f64 {
        self.state.x[1]
    }

    pub fn sin_phi(&self) -> f64 {
        self.state.x[2]
    }

    pub fn bias(&self) -> f64 {
        self.state.x[3]
    }

    /// Advances the filter from `s_prev` to `s_now`.
    ///
    /// The model is built at `s_now.v_x` with the current stiffnesses.
    pub fn step(&self, s_prev: &SensorSample, s_now: &SensorSample, dt: f64) -> Result<Self> {
        if !(s_now.v_x >= self.v_x_min) {
            return Err(Error::SpeedTooLow(s_now.v_x, self.v_x_min));
        }
        let ss = dynamics_matrices_augmented(&self.params, self.stiffness[0], self.stiffness[1], s_now.v_x)?;
        let ss = discretize_forward_euler(&ss, dt)?;
        let u_prev = DVector::from_element(1, s_prev.delta_f);
        let u_now = DVector::from_element(1, s_now.delta_f);
        let y = DVector::from_vec(vec![s_now.a_y_sen, s_now.r]);
        let mut state = ekf_update(&self.state, &ss, &u_prev, &u_now, &y, &self.noise)?;
        state.x[2] = state.x[2].clamp(-1.0, 1.0);
        Ok(Self { state, ..self.clone() })
    }
}

/// Which kinematics model a [`KinObserver`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinVariant {
    /// `[v_x, v_y, sin(phi)]`, raw lateral acceleration input.
    WithBank,
    /// `[v_x, v_y]`, lateral acceleration corrected by the dynamics observer's
    /// bank and bias estimates.
    Corrected,
}

impl KinVariant {
    pub fn states(self) -> usize {
        match self {
            KinVariant::WithBank => 3,
            KinVariant::Corrected => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KinObserver {
    pub state: ObserverState,
    pub noise: NoiseConfig,
    variant: KinVariant,
    g: f64,
}

impl KinObserver {
    pub fn new(
        variant: KinVariant,
        noise: NoiseConfig,
        x0: DVector<f64>,
        p0: DMatrix<f64>,
        g: f64,
    ) -> Result<Self> {
        if x0.len() != variant.states() {
            return Err(Error::Dimension(format!(
                "{variant:?} kinematics observer needs {} states, got {}",
                variant.states(),
                x0.len()
            )));
        }
        Ok(Self {
            state: ObserverState::new(x0, p0)?,
            noise,
            variant,
            g,
        })
    }

    pub fn variant(&self) -> KinVariant {
        self.variant
    }

    pub fn v_x(&self) -> f64 {
        self.state.x[0]
    }

    pub fn v_y(&self) -> f64 {
        self.state.x[1]
    }

    /// Bank estimate of the three-state variant.
    pub fn sin_phi(&self) -> Option<f64> {
        match self.variant {
            KinVariant::WithBank => Some(self.state.x[2]),
            KinVariant::Corrected => None,
        }
    }

    /// Advances the filter from `s_prev` to `s_now`.
    ///
    /// The transition uses the yaw rate and accelerations of `s_prev`. For the
    /// corrected variant `correction` (normally `-g sin(phi_hat) - d_hat` from
    /// the previous step) is added to the lateral acceleration input; the
    /// three-state variant ignores it.
    pub fn step(&self, s_prev: &SensorSample, s_now: &SensorSample, correction: f64, dt: f64) -> Result<Self> {
        let (ss, a_y_in) = match self.variant {
            KinVariant::WithBank => (kinematics_matrices_bank(s_prev.r, self.g), s_prev.a_y_sen),
            KinVariant::Corrected => (kinematics_matrices_plain(s_prev.r), s_prev.a_y_sen + correction),
        };
        let ss = discretize_forward_euler(&ss, dt)?;
        let u_prev = DVector::from_vec(vec![s_prev.a_x, a_y_in]);
        let u_now = DVector::zeros(2);
        let y = DVector::from_element(1, s_now.v_x);
        let state = ekf_update(&self.state, &ss, &u_prev, &u_now, &y, &self.noise)?;
        Ok(Self { state, ..self.clone() })
    }

    /// Re-seeds the kinematics estimate from the dynamics observer.
    ///
    /// Mean becomes `[v_x_meas, v_y_d, (sin_phi_d)]`; covariance becomes
    /// `diag(0, P_d(1,1), (P_d(3,3)))`.
    pub fn reset_from_dyn(&self, dyn_obs: &DynObserver, v_x_meas: f64) -> Self {
        let pd = &dyn_obs.state.p;
        let (x, diag) = match self.variant {
            KinVariant::WithBank => (
                vec![v_x_meas, dyn_obs.v_y(), dyn_obs.sin_phi()],
                vec![0.0, pd[(0, 0)], pd[(2, 2)]],
            ),
            KinVariant::Corrected => (vec![v_x_meas, dyn_obs.v_y()], vec![0.0, pd[(0, 0)]]),
        };
        let mut out = self.clone();
        out.state.x = DVector::from_vec(x);
        out.state.p = DMatrix::from_diagonal(&DVector::from_vec(diag));
        out
    }
}

/// Rank of the discrete observability matrix of the three-state kinematics
/// model at yaw rate `r`.
pub fn kinematics_observability_rank(r: f64, g: f64, dt: f64) -> Result<usize> {
    let ss = discretize_forward_euler(&kinematics_matrices_bank(r, g), dt)?;
    let n = ss.states();
    let mut obs = DMatrix::zeros(n * ss.outputs(), n);
    let mut row = ss.c.clone();
    for i in 0..n {
        obs.view_mut((i * ss.outputs(), 0), (ss.outputs(), n)).copy_from(&row);
        row = &row * &ss.a;
    }
    let sv = obs.singular_values();
    let max = sv.max();
    Ok(sv.iter().filter(|&&s| s > max * 1e-12).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GRAVITY;
    use approx::assert_relative_eq;

    fn sample(t: f64, r: f64, v_x: f64) -> SensorSample {
        SensorSample {
            t,
            a_x: 0.0,
            a_y_sen: 0.0,
            r,
            v_x,
            delta_f: 0.0,
        }
    }

    fn dyn_obs() -> DynObserver {
        DynObserver::new(
            VehicleParams::default(),
            NoiseConfig::diagonal(&[6.0, 0.5, 0.1, 0.0002], &[0.1, 0.01]),
            DVector::zeros(4),
            DMatrix::identity(4, 4),
            1.0,
        )
        .unwrap()
    }

    fn kin(variant: KinVariant) -> KinObserver {
        let n = variant.states();
        let w = [0.2, 0.6, 0.05];
        KinObserver::new(
            variant,
            NoiseConfig::diagonal(&w[..n], &[0.05]),
            DVector::zeros(n),
            DMatrix::identity(n, n),
            GRAVITY,
        )
        .unwrap()
    }

    #[test]
    fn reset_three_state() {
        let mut d = dyn_obs();
        d.state.x = DVector::from_vec(vec![0.2, 0.01, 0.05, 0.1]);
        d.state.p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, 2.5, 3.5, 4.5]));
        let k = kin(KinVariant::WithBank).reset_from_dyn(&d, 17.0);
        assert_eq!(k.state.x.as_slice(), &[17.0, 0.2, 0.05]);
        assert_eq!(k.state.p, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.5, 3.5])));
        let again = k.reset_from_dyn(&d, 17.0);
        assert_eq!(again.state, k.state);
    }

    #[test]
    fn reset_two_state() {
        let mut d = dyn_obs();
        d.state.x = DVector::from_vec(vec![-0.4, 0.0, 0.1, 0.0]);
        d.state.p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 2.0, 3.0, 4.0]));
        let k = kin(KinVariant::Corrected).reset_from_dyn(&d, 9.0);
        assert_eq!(k.state.x.as_slice(), &[9.0, -0.4]);
        assert_eq!(k.state.p, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.7])));
    }

    #[test]
    fn lateral_velocity_unobservable_without_yaw() {
        let mut k = kin(KinVariant::WithBank);
        k.state.x = DVector::from_vec(vec![20.0, 0.35, 0.0]);
        let s = sample(0.0, 0.0, 20.0);
        for _ in 0..500 {
            k = k.step(&s, &s, 0.0, 0.01).unwrap();
        }
        assert_eq!(k.v_y(), 0.35);
        assert_eq!(k.sin_phi(), Some(0.0));
    }

    #[test]
    fn dyn_step_rejects_low_speed() {
        let d = dyn_obs();
        let s = sample(0.0, 0.0, 0.5);
        assert!(matches!(d.step(&s, &s, 0.01), Err(Error::SpeedTooLow(..))));
    }

    #[test]
    fn dyn_zero_input_equilibrium() {
        let mut d = dyn_obs();
        d.state.x = DVector::from_vec(vec![0.3, 0.0, 0.05, -0.1]);
        let s = sample(0.0, 0.0, 20.0);
        for _ in 0..3000 {
            d = d.step(&s, &s, 0.01).unwrap();
        }
        // Without excitation only g sin φ + d reaches the accelerometer, so the
        // split between bank and bias drifts slowly; the sum settles fast.
        let g = VehicleParams::default().g;
        assert!((g * d.sin_phi() + d.bias()).abs() < 1e-3);
        assert!(d.yaw_rate().abs() < 1e-4);

        let mut z = dyn_obs();
        for _ in 0..1000 {
            z = z.step(&s, &s, 0.01).unwrap();
        }
        assert_eq!(z.state.x, DVector::zeros(4));
    }

    #[test]
    fn sin_phi_is_clamped() {
        let mut d = dyn_obs();
        d.state.x = DVector::from_vec(vec![0.0, 0.0, 40.0, 0.0]);
        let s = sample(0.0, 0.0, 20.0);
        let d = d.step(&s, &s, 0.01).unwrap();
        assert!(d.sin_phi() <= 1.0);
    }

    #[test]
    fn kinematics_observability() {
        assert!(kinematics_observability_rank(0.0, GRAVITY, 0.01).unwrap() < 3);
        for r in [0.1, -0.1, 0.3, 1.0] {
            assert_eq!(kinematics_observability_rank(r, GRAVITY, 0.01).unwrap(), 3);
        }
    }

    #[test]
    fn corrected_variant_matches_bank_variant_without_bank() {
        // With zero bank the corrected input equals the raw input and the two
        // variants estimate the same lateral velocity when the bank state is
        // pinned at zero with zero process noise.
        let mut k3 = KinObserver::new(
            KinVariant::WithBank,
            NoiseConfig::diagonal(&[0.2, 0.6, 0.0], &[0.05]),
            DVector::from_vec(vec![15.0, 0.0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0])),
            GRAVITY,
        )
        .unwrap();
        let mut k2 = kin(KinVariant::Corrected);
        k2.state.x = DVector::from_vec(vec![15.0, 0.0]);
        let mut prev = sample(0.0, 0.3, 15.0);
        for i in 1..800 {
            let t = i as f64 * 0.01;
            let now = SensorSample {
                t,
                a_x: 0.1 * t.sin(),
                a_y_sen: 4.5 + 0.5 * t.cos(),
                r: 0.3 + 0.05 * (2.0 * t).sin(),
                v_x: 15.0 + 0.01 * t,
                delta_f: 0.0,
            };
            k3 = k3.step(&prev, &now, 0.0, 0.01).unwrap();
            k2 = k2.step(&prev, &now, 0.0, 0.01).unwrap();
            assert_relative_eq!(k3.v_y(), k2.v_y(), epsilon = 1e-9);
            prev = now;
        }
    }
}
