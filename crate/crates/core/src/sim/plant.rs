use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{SensorSample, VehicleParams};
use crate::sim::tire::TireModel;

/// Below this speed the lateral states are frozen.
pub const HOLD_SPEED: f64 = 0.5;

/// Planar rigid-body state of the simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub v_x: f64,
    pub v_y: f64,
    pub r: f64,
    pub psi: f64,
    pub x: f64,
    pub y: f64,
}

/// Tire laws of both axles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxleTires {
    pub front: TireModel,
    pub rear: TireModel,
}

/// Inputs held constant over one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantInput {
    pub delta_f: f64,
    pub a_x_cmd: f64,
    /// Road bank angle, rad.
    pub phi: f64,
}

/// Small-angle slip of each axle, as in the estimator's tire model.
pub fn slip(state: &PlantState, delta_f: f64, params: &VehicleParams) -> (f64, f64) {
    if state.v_x < HOLD_SPEED {
        return (0.0, 0.0);
    }
    (
        delta_f - (state.v_y + params.l_f * state.r) / state.v_x,
        -(state.v_y - params.l_r * state.r) / state.v_x,
    )
}

/// Time derivative of the state.
pub fn derivative(state: &PlantState, input: &PlantInput, tires: &AxleTires, params: &VehicleParams) -> PlantState {
    let (s, c) = state.psi.sin_cos();
    let mut d = PlantState {
        v_x: if state.v_x <= 0.0 && input.a_x_cmd < 0.0 { 0.0 } else { input.a_x_cmd },
        v_y: 0.0,
        r: 0.0,
        psi: state.r,
        x: state.v_x * c - state.v_y * s,
        y: state.v_x * s + state.v_y * c,
    };
    if state.v_x >= HOLD_SPEED {
        let (a_f, a_r) = slip(state, input.delta_f, params);
        let f_f = tires.front.force(a_f) * input.delta_f.cos();
        let f_r = tires.rear.force(a_r);
        d.v_y = (f_f + f_r) / params.m - state.v_x * state.r - params.g * input.phi.sin();
        d.r = (params.l_f * f_f - params.l_r * f_r) / params.i_z;
    }
    d
}

fn axpy(a: &PlantState, h: f64, d: &PlantState) -> PlantState {
    PlantState {
        v_x: a.v_x + h * d.v_x,
        v_y: a.v_y + h * d.v_y,
        r: a.r + h * d.r,
        psi: a.psi + h * d.psi,
        x: a.x + h * d.x,
        y: a.y + h * d.y,
    }
}

/// One classical Runge-Kutta step with inputs held.
pub fn plant_step(
    state: &PlantState,
    input: &PlantInput,
    tires: &AxleTires,
    params: &VehicleParams,
    dt: f64,
) -> PlantState {
    let k1 = derivative(state, input, tires, params);
    let k2 = derivative(&axpy(state, dt / 2.0, &k1), input, tires, params);
    let k3 = derivative(&axpy(state, dt / 2.0, &k2), input, tires, params);
    let k4 = derivative(&axpy(state, dt, &k3), input, tires, params);
    let mut out = *state;
    for (o, (a, (b, (c, d)))) in [
        (&mut out.v_x, (k1.v_x, (k2.v_x, (k3.v_x, k4.v_x)))),
        (&mut out.v_y, (k1.v_y, (k2.v_y, (k3.v_y, k4.v_y)))),
        (&mut out.r, (k1.r, (k2.r, (k3.r, k4.r)))),
        (&mut out.psi, (k1.psi, (k2.psi, (k3.psi, k4.psi)))),
        (&mut out.x, (k1.x, (k2.x, (k3.x, k4.x)))),
        (&mut out.y, (k1.y, (k2.y, (k3.y, k4.y)))),
    ] {
        *o += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    }
    out.v_x = out.v_x.max(0.0);
    out
}

/// Standard deviations of the sensor noise, per channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    pub a_x: f64,
    pub a_y: f64,
    pub r: f64,
    pub v_x: f64,
    pub delta_f: f64,
}

impl SensorNoise {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            a_x: self.a_x * k,
            a_y: self.a_y * k,
            r: self.r * k,
            v_x: self.v_x * k,
            delta_f: self.delta_f * k,
        }
    }

    fn is_valid(&self) -> bool {
        [self.a_x, self.a_y, self.r, self.v_x, self.delta_f]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite())
    }
}

/// Noise-free lateral accelerometer reading: `v̇_y + v_x r + g sin φ + d`.
pub fn lateral_accel_reading(state: &PlantState, deriv: &PlantState, phi: f64, d: f64, g: f64) -> f64 {
    deriv.v_y + state.v_x * state.r + g * phi.sin() + d
}

/// Samples all sensors at one instant. Five normal draws are taken per call
/// in a fixed order, whatever the noise levels, so the stream depends only on
/// the seed.
#[allow(clippy::too_many_arguments)]
pub fn sensor_model<R: Rng + ?Sized>(
    t: f64,
    state: &PlantState,
    deriv: &PlantState,
    input: &PlantInput,
    d: f64,
    g: f64,
    noise: &SensorNoise,
    rng: &mut R,
) -> SensorSample {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |sigma: f64| sigma * unit.sample(rng);
    debug_assert!(noise.is_valid());
    SensorSample {
        t,
        a_x: deriv.v_x - state.r * state.v_y + draw(noise.a_x),
        a_y_sen: lateral_accel_reading(state, deriv, input.phi, d, g) + draw(noise.a_y),
        r: state.r + draw(noise.r),
        v_x: state.v_x + draw(noise.v_x),
        delta_f: input.delta_f + draw(noise.delta_f),
    }
}

pub(crate) fn noise_is_valid(noise: &SensorNoise) -> bool {
    noise.is_valid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tire::TireModel;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn linear() -> AxleTires {
        let p = params();
        AxleTires {
            front: TireModel::linear(p.c_f_nom),
            rear: TireModel::linear(p.c_r_nom),
        }
    }

    #[test]
    fn straight_line_equilibrium() {
        let s0 = PlantState {
            v_x: 20.0,
            ..Default::default()
        };
        let input = PlantInput {
            a_x_cmd: 0.5,
            ..Default::default()
        };
        let mut s = s0;
        for _ in 0..100 {
            s = plant_step(&s, &input, &linear(), &params(), 0.01);
        }
        assert_eq!((s.v_y, s.r, s.psi, s.y), (0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(s.v_x, 20.5, epsilon = 1e-12);
    }

    #[test]
    fn steady_state_yaw_gain_matches_bicycle_model() {
        let p = params();
        let (v, delta) = (15.0, 0.01);
        let l = p.wheelbase();
        let k_us = p.m / l * (p.l_r / p.c_f_nom - p.l_f / p.c_r_nom);
        let r_ss = v / (l + k_us * v * v) * delta;
        let mut s = PlantState {
            v_x: v,
            ..Default::default()
        };
        let input = PlantInput {
            delta_f: delta,
            ..Default::default()
        };
        for _ in 0..2000 {
            s = plant_step(&s, &input, &linear(), &p, 0.01);
        }
        // the plant carries cos δ on the front force
        assert!((s.r - r_ss).abs() <= 0.005 * r_ss.abs(), "{} vs {}", s.r, r_ss);
    }

    #[test]
    fn banked_straight_line_force_balance() {
        let p = params();
        let phi = 14f64.to_radians();
        let v = 15.0;
        let l = p.wheelbase();
        // r = 0: moments balance, forces carry the gravity component
        let f_r = p.m * p.g * phi.sin() * p.l_f / l;
        let f_f = p.m * p.g * phi.sin() * p.l_r / l;
        let v_y = -v * f_r / p.c_r_nom;
        let delta = f_f / p.c_f_nom + v_y / v;
        let mut s = PlantState {
            v_x: v,
            v_y,
            ..Default::default()
        };
        let input = PlantInput {
            delta_f: delta,
            phi,
            ..Default::default()
        };
        for _ in 0..500 {
            s = plant_step(&s, &input, &linear(), &p, 0.01);
        }
        let (a_f, a_r) = slip(&s, delta, &p);
        let lateral = p.c_f_nom * a_f + p.c_r_nom * a_r;
        assert!((lateral - p.m * p.g * phi.sin()).abs() <= 0.01 * p.m * p.g * phi.sin());
    }

    #[test]
    fn kinetic_energy_conserved_without_inputs() {
        let p = params();
        let s0 = PlantState {
            v_x: 12.0,
            ..Default::default()
        };
        let mut s = s0;
        for _ in 0..5000 {
            s = plant_step(&s, &PlantInput::default(), &linear(), &p, 0.01);
        }
        let ke = |s: &PlantState| 0.5 * p.m * (s.v_x * s.v_x + s.v_y * s.v_y) + 0.5 * p.i_z * s.r * s.r;
        assert_relative_eq!(ke(&s), ke(&s0), max_relative = 1e-12);
    }

    #[test]
    fn speed_floors_at_zero() {
        let mut s = PlantState {
            v_x: 0.05,
            ..Default::default()
        };
        let input = PlantInput {
            a_x_cmd: -3.0,
            ..Default::default()
        };
        for _ in 0..10 {
            s = plant_step(&s, &input, &linear(), &params(), 0.01);
        }
        assert_eq!(s.v_x, 0.0);
    }

    #[test]
    fn sensor_examples() {
        let g = params().g;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let quiet = SensorNoise::default();
        let state = PlantState {
            v_x: 10.0,
            v_y: 0.2,
            r: 0.3,
            ..Default::default()
        };
        let deriv = PlantState {
            v_y: 0.7,
            ..Default::default()
        };
        let s = sensor_model(0.0, &state, &deriv, &PlantInput::default(), 0.0, g, &quiet, &mut rng);
        assert_eq!(s.a_y_sen, 0.7 + 10.0 * 0.3);

        let stat = PlantState::default();
        let banked = PlantInput {
            phi: 14f64.to_radians(),
            ..Default::default()
        };
        let s = sensor_model(0.0, &stat, &stat, &banked, 0.0, g, &quiet, &mut rng);
        assert!((s.a_y_sen - 2.37244).abs() < 1e-5, "{}", s.a_y_sen);

        let s = sensor_model(0.0, &stat, &stat, &PlantInput::default(), 0.3, g, &quiet, &mut rng);
        assert_eq!(s.a_y_sen, 0.3);
    }

    #[test]
    fn sensor_noise_is_seeded() {
        let noise = SensorNoise {
            a_x: 0.1,
            a_y: 0.2,
            r: 0.01,
            v_x: 0.05,
            delta_f: 0.001,
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| {
                    sensor_model(
                        i as f64,
                        &PlantState::default(),
                        &PlantState::default(),
                        &PlantInput::default(),
                        0.0,
                        9.8,
                        &noise,
                        &mut rng,
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
