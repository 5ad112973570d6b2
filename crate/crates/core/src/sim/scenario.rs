use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SensorSample, VehicleParams};
use crate::sim::plant::{
    derivative, lateral_accel_reading, noise_is_valid, plant_step, sensor_model, slip, AxleTires, PlantInput,
    PlantState, SensorNoise,
};
use crate::sim::tire::{TireKind, TireModel};

/// Cone spacing of the slalom course, m.
pub const SLALOM_SPACING: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Slalom,
    SevereSingleLaneChange,
    SteadyCircle,
    BankedDoubleLaneChange,
    StopNTurn,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Slalom,
        ScenarioKind::SevereSingleLaneChange,
        ScenarioKind::SteadyCircle,
        ScenarioKind::BankedDoubleLaneChange,
        ScenarioKind::StopNTurn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Slalom => "slalom",
            ScenarioKind::SevereSingleLaneChange => "severe_single_lane_change",
            ScenarioKind::SteadyCircle => "steady_circle",
            ScenarioKind::BankedDoubleLaneChange => "banked_double_lane_change",
            ScenarioKind::StopNTurn => "stop_n_turn",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidScenario(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TireSpec {
    pub kind: TireKind,
    pub mu_peak: f64,
    /// True stiffness as a multiple of the nominal stiffness.
    pub stiffness_scale: f64,
}

impl Default for TireSpec {
    fn default() -> Self {
        Self {
            kind: TireKind::Brush,
            mu_peak: 1.0,
            stiffness_scale: 1.0,
        }
    }
}

/// Default multiplier on [`default_sensor_noise`]. The estimator's
/// measurement covariances are inflated tuning values; the simulated sensors
/// use covariances a thousand times smaller.
pub const DEFAULT_NOISE_SCALE: f64 = 0.031_622_776_601_683_79;

/// Standard deviations matching the estimator's default measurement
/// covariances: `sqrt(0.1)` on both accelerometers, `sqrt(0.01)` on the yaw
/// rate, `sqrt(0.05)` on the speed; the steering angle is exact.
pub fn default_sensor_noise() -> SensorNoise {
    SensorNoise {
        a_x: 0.1f64.sqrt(),
        a_y: 0.1f64.sqrt(),
        r: 0.1,
        v_x: 0.05f64.sqrt(),
        delta_f: 0.0,
    }
}

/// Everything needed to reproduce one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Peak steering angle of the maneuver, rad. When absent it is searched
    /// for so that the noise-free peak lateral acceleration hits
    /// `target_peak_ay_g`.
    pub steer_amplitude: Option<f64>,
    pub target_peak_ay_g: Option<f64>,
    /// Plateau bank angle, degrees.
    pub bank_deg: f64,
    /// Lateral accelerometer bias, m/s².
    pub bias: f64,
    pub noise: SensorNoise,
    /// Multiplies every entry of `noise`.
    pub noise_scale: f64,
    pub tire: TireSpec,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::preset(ScenarioKind::Slalom)
    }
}

impl ScenarioSpec {
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Self {
            kind,
            duration: 40.0,
            dt: 0.01,
            speed: 50.0 / 3.6,
            steer_amplitude: None,
            target_peak_ay_g: None,
            bank_deg: 0.0,
            bias: 0.0,
            noise: default_sensor_noise(),
            noise_scale: DEFAULT_NOISE_SCALE,
            tire: TireSpec::default(),
            seed: 0,
        };
        match kind {
            ScenarioKind::Slalom => Self {
                target_peak_ay_g: Some(0.4),
                tire: TireSpec {
                    mu_peak: 0.5,
                    ..TireSpec::default()
                },
                ..base
            },
            ScenarioKind::SevereSingleLaneChange => Self {
                duration: 15.0,
                speed: 60.0 / 3.6,
                target_peak_ay_g: Some(0.6),
                ..base
            },
            ScenarioKind::SteadyCircle => Self {
                duration: 30.0,
                speed: 40.0 / 3.6,
                target_peak_ay_g: Some(0.5),
                ..base
            },
            ScenarioKind::BankedDoubleLaneChange => Self {
                duration: 30.0,
                speed: 60.0 / 3.6,
                target_peak_ay_g: Some(0.3),
                bank_deg: 14.0,
                ..base
            },
            ScenarioKind::StopNTurn => Self {
                duration: 30.0,
                speed: 10.0,
                steer_amplitude: Some(0.45),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad(format!("duration = {} must cover at least one step", self.duration));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad(format!("speed = {} must be positive", self.speed));
        }
        if let Some(a) = self.steer_amplitude {
            if !(a.is_finite() && a.abs() < PI / 2.0) {
                return bad(format!("steering amplitude {a} out of range"));
            }
        }
        if let Some(g) = self.target_peak_ay_g {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("target peak lateral acceleration {g} g must be positive"));
            }
        }
        if self.steer_amplitude.is_none() && self.target_peak_ay_g.is_none() {
            return bad("either steer_amplitude or target_peak_ay_g is required".into());
        }
        if !(self.bank_deg.abs() < 45.0) {
            return bad(format!("bank {}° out of range", self.bank_deg));
        }
        if !self.bias.is_finite() {
            return bad("bias must be finite".into());
        }
        if !(noise_is_valid(&self.noise) && self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if !(self.tire.mu_peak > 0.0 && self.tire.stiffness_scale > 0.0) {
            return bad("tire friction and stiffness scale must be positive".into());
        }
        Ok(())
    }

    fn frames(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }
}

/// Ground truth at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub r: f64,
    pub beta: f64,
    /// Bank angle, rad.
    pub phi: f64,
    pub d: f64,
    /// Secant stiffness of each axle at the current slip, N/rad.
    pub c_f: f64,
    pub c_r: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
    /// Noise-free lateral accelerometer reading.
    pub a_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Spec with the steering amplitude resolved.
    pub spec: ScenarioSpec,
    pub samples: Vec<SensorSample>,
    pub truth: Vec<TruthSample>,
}

fn smoothstep(t: f64, start: f64, len: f64) -> f64 {
    let x = ((t - start) / len).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn sine_pulse(t: f64, start: f64, period: f64) -> f64 {
    if t < start || t > start + period {
        0.0
    } else {
        (2.0 * PI * (t - start) / period).sin()
    }
}

/// Time-varying inputs of a scenario, excluding bank feed-forward.
struct Profile {
    kind: ScenarioKind,
    speed: f64,
    amplitude: f64,
    bank: f64,
}

const STOP_DECEL_START: f64 = 3.0;
const STOP_DECEL_END: f64 = 7.0;
const STOP_LOW_SPEED: f64 = 1.5;

impl Profile {
    fn steer(&self, t: f64) -> f64 {
        let a = self.amplitude;
        match self.kind {
            ScenarioKind::Slalom => {
                let f = self.speed / (2.0 * SLALOM_SPACING);
                a * smoothstep(t, 1.0, 1.0 / f) * (2.0 * PI * f * (t - 1.0)).sin() * (t >= 1.0) as u8 as f64
            }
            ScenarioKind::SevereSingleLaneChange => a * sine_pulse(t, 3.0, 2.5),
            ScenarioKind::SteadyCircle => a * smoothstep(t, 1.0, 3.0),
            ScenarioKind::BankedDoubleLaneChange => a * (sine_pulse(t, 10.0, 3.0) - sine_pulse(t, 16.0, 3.0)),
            ScenarioKind::StopNTurn => {
                let turn = (PI / 2.0) * self.turn_radius() / STOP_LOW_SPEED;
                let start = STOP_DECEL_END + 0.5;
                a * (smoothstep(t, start, 1.0) - smoothstep(t, start + turn, 1.0))
            }
        }
    }

    fn turn_radius(&self) -> f64 {
        3.009 / self.amplitude.abs().max(1e-3).tan()
    }

    fn speed_at(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::StopNTurn => {
                let turn = (PI / 2.0) * self.turn_radius() / STOP_LOW_SPEED + 2.0;
                let accel_start = STOP_DECEL_END + 0.5 + turn;
                let low = STOP_LOW_SPEED;
                if t < STOP_DECEL_START {
                    self.speed
                } else if t < STOP_DECEL_END {
                    self.speed + (low - self.speed) * (t - STOP_DECEL_START) / (STOP_DECEL_END - STOP_DECEL_START)
                } else if t < accel_start {
                    low
                } else {
                    (low + (self.speed - low) * (t - accel_start) / 4.0).min(self.speed)
                }
            }
            _ => self.speed,
        }
    }

    fn accel(&self, t: f64, dt: f64) -> f64 {
        (self.speed_at(t + dt) - self.speed_at(t)) / dt
    }

    fn bank(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::BankedDoubleLaneChange => self.bank * smoothstep(t, 1.0, 3.0),
            _ => self.bank,
        }
    }
}

fn axle_tires(spec: &ScenarioSpec, params: &VehicleParams) -> Result<AxleTires> {
    let k = spec.tire.stiffness_scale;
    let (c_f, c_r) = (params.c_f_nom * k, params.c_r_nom * k);
    let l = params.wheelbase();
    let (fz_f, fz_r) = (params.m * params.g * params.l_r / l, params.m * params.g * params.l_f / l);
    Ok(match spec.tire.kind {
        TireKind::Linear => AxleTires {
            front: TireModel::linear(c_f),
            rear: TireModel::linear(c_r),
        },
        TireKind::Brush => AxleTires {
            front: TireModel::brush(c_f, spec.tire.mu_peak, fz_f)?,
            rear: TireModel::brush(c_r, spec.tire.mu_peak, fz_r)?,
        },
    })
}

/// Steering and lateral velocity that hold a straight line on bank `phi`.
fn bank_trim(phi: f64, v_x: f64, tires: &AxleTires, params: &VehicleParams) -> Result<(f64, f64)> {
    if phi == 0.0 {
        return Ok((0.0, 0.0));
    }
    let l = params.wheelbase();
    let side = params.m * params.g * phi.sin();
    let too_steep = || Error::InvalidScenario(format!("bank {:.1}° exceeds tire grip", phi.to_degrees()));
    let alpha_r = tires.rear.inverse(side * params.l_f / l).ok_or_else(too_steep)?;
    let v_y = -alpha_r * v_x;
    let mut delta: f64 = 0.0;
    // the front force carries cos δ
    for _ in 0..50 {
        let alpha_f = tires.front.inverse(side * params.l_r / l / delta.cos()).ok_or_else(too_steep)?;
        delta = alpha_f + v_y / v_x;
    }
    Ok((delta, v_y))
}

struct Simulated {
    samples: Vec<SensorSample>,
    truth: Vec<TruthSample>,
    peak_ay: f64,
}

fn simulate(spec: &ScenarioSpec, amplitude: f64, params: &VehicleParams, tires: &AxleTires, noisy: bool) -> Result<Simulated> {
    let profile = Profile {
        kind: spec.kind,
        speed: spec.speed,
        amplitude,
        bank: spec.bank_deg.to_radians(),
    };
    let noise = if noisy { spec.noise.scaled(spec.noise_scale) } else { SensorNoise::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.frames();
    let dt = spec.dt;

    let v0 = profile.speed_at(0.0);
    let (_, v_y0) = bank_trim(profile.bank(0.0), v0, tires, params)?;
    let mut state = PlantState {
        v_x: v0,
        v_y: v_y0,
        ..Default::default()
    };
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut peak_ay: f64 = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        let phi = profile.bank(t);
        let v_ref = profile.speed_at(t).max(1e-3);
        let (delta_trim, _) = bank_trim(phi, v_ref, tires, params)?;
        let input = PlantInput {
            delta_f: profile.steer(t) + delta_trim,
            a_x_cmd: profile.accel(t, dt),
            phi,
        };
        let deriv = derivative(&state, &input, tires, params);
        samples.push(sensor_model(t, &state, &deriv, &input, spec.bias, params.g, &noise, &mut rng));
        let (alpha_f, alpha_r) = slip(&state, input.delta_f, params);
        let a_y = lateral_accel_reading(&state, &deriv, phi, spec.bias, params.g);
        let a_y_motion = deriv.v_y + state.v_x * state.r;
        peak_ay = peak_ay.max(a_y_motion.abs());
        truth.push(TruthSample {
            t,
            v_x: state.v_x,
            v_y: state.v_y,
            r: state.r,
            beta: if state.v_x > 0.0 { (state.v_y / state.v_x).atan() } else { 0.0 },
            phi,
            d: spec.bias,
            c_f: tires.front.effective_stiffness(alpha_f),
            c_r: tires.rear.effective_stiffness(alpha_r),
            alpha_f,
            alpha_r,
            a_y,
        });
        state = plant_step(&state, &input, tires, params, dt);
        if !(state.v_y.is_finite() && state.r.is_finite()) {
            return Err(Error::InvalidScenario(format!("plant diverged at t = {t:.2} s")));
        }
    }
    Ok(Simulated { samples, truth, peak_ay })
}

/// Bisects the steering amplitude until the noise-free peak lateral
/// acceleration from the motion is within 0.2% of `target` (m/s²).
fn search_amplitude(spec: &ScenarioSpec, target: f64, params: &VehicleParams, tires: &AxleTires) -> Result<f64> {
    let peak = |a: f64| simulate(spec, a, params, tires, false).map(|s| s.peak_ay);
    let (mut lo, mut hi) = (0.0, 0.02);
    while peak(hi)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1.2 {
            return Err(Error::InvalidScenario(format!(
                "peak lateral acceleration {:.2} g is not reachable",
                target / params.g
            )));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let p = peak(mid)?;
        if (p - target).abs() <= 2e-3 * target {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Simulates `spec`, producing aligned sensor and ground-truth streams.
pub fn generate_scenario(spec: &ScenarioSpec, params: &VehicleParams) -> Result<Scenario> {
    spec.validate()?;
    params.validate()?;
    let tires = axle_tires(spec, params)?;
    let amplitude = match (spec.steer_amplitude, spec.target_peak_ay_g) {
        (Some(a), _) => a,
        (None, Some(g)) => search_amplitude(spec, g * params.g, params, &tires)?,
        (None, None) => unreachable!("validated"),
    };
    let sim = simulate(spec, amplitude, params, &tires, true)?;
    let mut spec = spec.clone();
    spec.steer_amplitude = Some(amplitude);
    Ok(Scenario {
        spec,
        samples: sim.samples,
        truth: sim.truth,
    })
}

impl Scenario {
    /// Per-frame true stiffness pair, for the diagnostics recorder.
    pub fn true_stiffness(&self) -> Vec<nalgebra::Vector2<f64>> {
        self.truth.iter().map(|t| nalgebra::Vector2::new(t.c_f, t.c_r)).collect()
    }

    /// Peak noise-free lateral acceleration from the motion, in g.
    pub fn peak_lateral_g(&self, g: f64) -> f64 {
        self.truth
            .iter()
            .map(|t| (t.a_y - g * t.phi.sin() - t.d).abs())
            .fold(0.0, f64::max)
            / g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(kind: ScenarioKind) -> ScenarioSpec {
        ScenarioSpec {
            noise_scale: 0.0,
            ..ScenarioSpec::preset(kind)
        }
    }

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("drift".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn streams_are_aligned_at_fixed_cadence() {
        let sc = generate_scenario(&quiet(ScenarioKind::Slalom), &VehicleParams::default()).unwrap();
        assert_eq!(sc.samples.len(), sc.truth.len());
        assert_eq!(sc.samples.len(), 4001);
        for (i, (s, t)) in sc.samples.iter().zip(&sc.truth).enumerate() {
            assert_eq!(s.t, i as f64 * 0.01);
            assert_eq!(s.t, t.t);
            assert_eq!(t.beta, (t.v_y / t.v_x).atan());
        }
    }

    #[test]
    fn slalom_period_follows_cone_spacing() {
        let spec = ScenarioSpec {
            steer_amplitude: Some(0.02),
            ..quiet(ScenarioKind::Slalom)
        };
        let sc = generate_scenario(&spec, &VehicleParams::default()).unwrap();
        // steering zero crossings are half a period apart: one cone per crossing
        let crossings: Vec<f64> = sc
            .samples
            .windows(2)
            .filter(|w| w[0].delta_f < 0.0 && w[1].delta_f >= 0.0)
            .map(|w| w[1].t)
            .collect();
        let period = crossings[2] - crossings[1];
        let expected = 2.0 * SLALOM_SPACING / spec.speed;
        assert!((period - expected).abs() <= 0.011, "{period} vs {expected}");
    }

    #[test]
    fn lane_change_hits_target_band() {
        let p = VehicleParams::default();
        let sc = generate_scenario(&quiet(ScenarioKind::SevereSingleLaneChange), &p).unwrap();
        let peak = sc.peak_lateral_g(p.g);
        assert!((0.55..=0.65).contains(&peak), "{peak}");
    }

    #[test]
    fn steady_circle_sideslip_settles() {
        let sc = generate_scenario(&quiet(ScenarioKind::SteadyCircle), &VehicleParams::default()).unwrap();
        let half = &sc.truth[sc.truth.len() / 2..];
        let mean = half.iter().map(|t| t.beta).sum::<f64>() / half.len() as f64;
        let var = half.iter().map(|t| (t.beta - mean).powi(2)).sum::<f64>() / half.len() as f64;
        assert!(var.sqrt() < 1e-3);
        assert!(mean.abs() > 1e-3);
    }

    #[test]
    fn banked_plateau_and_trim() {
        let p = VehicleParams::default();
        let sc = generate_scenario(&quiet(ScenarioKind::BankedDoubleLaneChange), &p).unwrap();
        let last = sc.truth.last().unwrap();
        assert!((last.phi - 14f64.to_radians()).abs() < 1e-12);
        // trimmed straight line: no residual yaw once the maneuver is over
        assert!(last.r.abs() < 1e-3, "{}", last.r);
        assert!((last.a_y - p.g * last.phi.sin()).abs() < 1e-2);
    }

    #[test]
    fn stop_n_turn_stays_above_hold_speed_and_turns() {
        let sc = generate_scenario(&quiet(ScenarioKind::StopNTurn), &VehicleParams::default()).unwrap();
        let min_v = sc.truth.iter().map(|t| t.v_x).fold(f64::INFINITY, f64::min);
        assert!((min_v - 1.5).abs() < 1e-6, "{min_v}");
        let heading: f64 = sc.truth.iter().map(|t| t.r * 0.01).sum();
        assert!((heading.to_degrees() - 90.0).abs() < 10.0, "{}", heading.to_degrees());
    }

    #[test]
    fn seeded_determinism() {
        let spec = ScenarioSpec {
            seed: 42,
            duration: 5.0,
            steer_amplitude: Some(0.03),
            ..ScenarioSpec::preset(ScenarioKind::Slalom)
        };
        let p = VehicleParams::default();
        let a = generate_scenario(&spec, &p).unwrap();
        let b = generate_scenario(&spec, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&ScenarioSpec { seed: 43, ..spec }, &p).unwrap();
        assert_ne!(a.samples, c.samples);
        assert_eq!(a.truth, c.truth);
    }

    #[test]
    fn invalid_specs_rejected() {
        let p = VehicleParams::default();
        let base = quiet(ScenarioKind::Slalom);
        for spec in [
            ScenarioSpec { dt: 0.0, ..base.clone() },
            ScenarioSpec { speed: -1.0, ..base.clone() },
            ScenarioSpec {
                steer_amplitude: None,
                target_peak_ay_g: None,
                ..base.clone()
            },
            ScenarioSpec { bank_deg: 60.0, ..base.clone() },
            ScenarioSpec {
                noise_scale: -1.0,
                ..base.clone()
            },
        ] {
            assert!(matches!(generate_scenario(&spec, &p), Err(Error::InvalidScenario(_))));
        }
        let steep = ScenarioSpec {
            bank_deg: 40.0,
            kind: ScenarioKind::BankedDoubleLaneChange,
            tire: TireSpec {
                mu_peak: 0.3,
                ..TireSpec::default()
            },
            ..base
        };
        assert!(generate_scenario(&steep, &p).is_err());
    }
}
