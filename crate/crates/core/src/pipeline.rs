//! Frame-by-frame orchestration of the estimators.
//!
//! Four variants share one driver:
//!
//! * `Algorithm1`: dynamics observer, three-state kinematics observer with a
//!   bank state, stiffness adaptation gated on yaw rate.
//! * `Algorithm2`: as above, but the kinematics observer takes the lateral
//!   acceleration corrected by the dynamics observer's bank and bias estimates,
//!   and adaptation also requires a well-conditioned regression row.
//! * `DynamicsOnly`: the dynamics observer with nominal stiffness.
//! * `HybridSwitch`: both observers without adaptation; the reported sideslip
//!   comes from the kinematics observer while the yaw-rate gate is open.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    build_regression, clamp_stiffness, conditioning_gate, recursive_rwls_step, yaw_accel_estimate,
    AdaptationConfig, AdaptationState,
};
use crate::diagnostics::DiagnosticsTrace;
use crate::ekf::NoiseConfig;
use crate::error::{Error, Result};
use crate::model::{SensorSample, VehicleParams};
use crate::observers::{DynObserver, KinObserver, KinVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Algorithm1,
    Algorithm2,
    DynamicsOnly,
    HybridSwitch,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Algorithm1,
        Variant::Algorithm2,
        Variant::DynamicsOnly,
        Variant::HybridSwitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Algorithm1 => "algorithm1",
            Variant::Algorithm2 => "algorithm2",
            Variant::DynamicsOnly => "dynamics_only",
            Variant::HybridSwitch => "hybrid_switch",
        }
    }

    fn kinematics(self) -> Option<KinVariant> {
        match self {
            Variant::Algorithm1 => Some(KinVariant::WithBank),
            Variant::Algorithm2 | Variant::HybridSwitch => Some(KinVariant::Corrected),
            Variant::DynamicsOnly => None,
        }
    }

    fn adapts(self) -> bool {
        matches!(self, Variant::Algorithm1 | Variant::Algorithm2)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Diagonal noise covariances of both observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverNoise {
    /// Kinematics process noise `[v_x, v_y, sin φ]`; the two-state model uses
    /// the first two entries.
    pub w_k: [f64; 3],
    pub v_k: f64,
    /// Dynamics process noise `[v_y, r, sin φ, d]`.
    pub w_d: [f64; 4],
    /// Dynamics measurement noise `[a_y, r]`.
    pub v_d: [f64; 2],
}

impl Default for ObserverNoise {
    fn default() -> Self {
        Self {
            w_k: [0.2, 0.6, 0.05],
            v_k: 0.05,
            w_d: [6.0, 0.5, 0.1, 0.0002],
            v_d: [0.1, 0.01],
        }
    }
}

impl ObserverNoise {
    fn validate(&self) -> Result<()> {
        let v_k = [self.v_k];
        for &v in self.w_k.iter().chain(&v_k).chain(&self.w_d).chain(&self.v_d) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("noise covariance entry {v} must be finite and >= 0")));
            }
        }
        if !(self.v_k > 0.0 && self.v_d.iter().all(|&v| v > 0.0)) {
            return Err(Error::InvalidParams("measurement noise must be positive".into()));
        }
        Ok(())
    }

    pub fn dynamics(&self) -> NoiseConfig {
        NoiseConfig::diagonal(&self.w_d, &self.v_d)
    }

    pub fn kinematics(&self, variant: KinVariant) -> NoiseConfig {
        NoiseConfig::diagonal(&self.w_k[..variant.states()], &[self.v_k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub dt: f64,
    pub params: VehicleParams,
    pub noise: ObserverNoise,
    pub adaptation: AdaptationConfig,
    /// Initial covariance of both observers is `p0 · I`.
    pub p0: f64,
    /// Initial dynamics state `[v_y, r, sin φ, d]`.
    pub x0_dyn: [f64; 4],
    /// Below this measured speed all estimates are held.
    pub v_x_min: f64,
    pub diagnostics: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Algorithm2,
            dt: 0.01,
            params: VehicleParams::default(),
            noise: ObserverNoise::default(),
            adaptation: AdaptationConfig::default(),
            p0: 1.0,
            x0_dyn: [0.0; 4],
            v_x_min: 1.0,
            diagnostics: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveTimeStep(self.dt));
        }
        self.params.validate()?;
        self.noise.validate()?;
        self.adaptation.validate()?;
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidParams(format!("p0 = {} must be >= 0", self.p0)));
        }
        if !(self.v_x_min > 0.0) {
            return Err(Error::InvalidParams(format!("v_x_min = {} must be > 0", self.v_x_min)));
        }
        Ok(())
    }
}

/// Everything the pipeline reports for one input frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateFrame {
    pub t: f64,
    pub beta_hat: f64,
    pub vy_d: f64,
    /// NaN for the dynamics-only variant.
    pub vy_k: f64,
    pub sin_phi: f64,
    pub d: f64,
    pub c_f: f64,
    pub c_r: f64,
    /// `|r| >= r_t` on this frame.
    pub yaw_gate: bool,
    /// Conditioning check result; always true where the variant does not use it.
    pub cond_gate: bool,
    /// A recursive least-squares step was applied.
    pub adapted: bool,
    /// The handed-over stiffness was clamped.
    pub clamped: bool,
    /// Speed below `v_x_min`; estimates are held from the previous frame.
    pub speed_hold: bool,
}

/// State of one estimator run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    theta_plus: Vector2<f64>,
    dyn_obs: DynObserver,
    kin: Option<KinObserver>,
    adapt: AdaptationState,
    r_dot: f64,
    correction: f64,
    last: Option<EstimateFrame>,
    frames: usize,
    diagnostics: Option<DiagnosticsTrace>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let theta_plus = cfg.params.nominal_stiffness();
        let dyn_obs = DynObserver::new(
            cfg.params.clone(),
            cfg.noise.dynamics(),
            DVector::from_column_slice(&cfg.x0_dyn),
            DMatrix::identity(4, 4) * cfg.p0,
            cfg.v_x_min,
        )?;
        let kin = cfg
            .variant
            .kinematics()
            .map(|kv| {
                let n = kv.states();
                KinObserver::new(
                    kv,
                    cfg.noise.kinematics(kv),
                    DVector::zeros(n),
                    DMatrix::identity(n, n) * cfg.p0,
                    cfg.params.g,
                )
            })
            .transpose()?;
        let diagnostics = (cfg.diagnostics && cfg.variant.adapts())
            .then(|| DiagnosticsTrace::new(cfg.adaptation.lambda, cfg.adaptation.delta));
        Ok(Self {
            theta_plus,
            dyn_obs,
            kin,
            adapt: AdaptationState::new(theta_plus),
            r_dot: 0.0,
            correction: 0.0,
            last: None,
            frames: 0,
            diagnostics,
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dynamics(&self) -> &DynObserver {
        &self.dyn_obs
    }

    pub fn kinematics(&self) -> Option<&KinObserver> {
        self.kin.as_ref()
    }

    pub fn adaptation(&self) -> &AdaptationState {
        &self.adapt
    }

    pub fn diagnostics(&self) -> Option<&DiagnosticsTrace> {
        self.diagnostics.as_ref()
    }

    pub fn into_diagnostics(self) -> Option<DiagnosticsTrace> {
        self.diagnostics
    }

    /// Frames processed so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Consumes the first sample. Only the kinematics longitudinal speed is
    /// seeded from it; everything else starts from the configured state.
    pub fn init(&mut self, s0: &SensorSample) -> Result<EstimateFrame> {
        if !s0.is_finite() {
            return Err(Error::InvalidScenario("non-finite sample".into()).at_frame(0));
        }
        if let Some(k) = self.kin.as_mut() {
            k.state.x[0] = s0.v_x;
        }
        let frame = EstimateFrame {
            t: s0.t,
            beta_hat: if s0.v_x > 0.0 { (self.dyn_obs.v_y() / s0.v_x).atan() } else { 0.0 },
            vy_d: self.dyn_obs.v_y(),
            vy_k: self.kin.as_ref().map_or(f64::NAN, |k| k.v_y()),
            sin_phi: self.dyn_obs.sin_phi(),
            d: self.dyn_obs.bias(),
            c_f: self.theta_plus[0],
            c_r: self.theta_plus[1],
            yaw_gate: s0.r.abs() >= self.cfg.adaptation.r_t,
            cond_gate: true,
            adapted: false,
            clamped: false,
            speed_hold: s0.v_x < self.cfg.v_x_min,
        };
        self.last = Some(frame);
        self.frames = 1;
        Ok(frame)
    }

    /// Advances one frame. `theta_true` is the true stiffness, used only by
    /// the diagnostics recorder.
    pub fn step(
        &mut self,
        s_prev: &SensorSample,
        s_now: &SensorSample,
        theta_true: Option<Vector2<f64>>,
    ) -> Result<EstimateFrame> {
        let index = self.frames;
        let frame = self.step_inner(s_prev, s_now, theta_true).map_err(|e| e.at_frame(index))?;
        self.last = Some(frame);
        self.frames += 1;
        Ok(frame)
    }

    fn step_inner(
        &mut self,
        s_prev: &SensorSample,
        s_now: &SensorSample,
        theta_true: Option<Vector2<f64>>,
    ) -> Result<EstimateFrame> {
        if !s_now.is_finite() {
            return Err(Error::InvalidScenario("non-finite sample".into()));
        }
        let last = self.last.ok_or_else(|| Error::Config("pipeline stepped before init".into()))?;
        let dt = self.cfg.dt;
        let ac = &self.cfg.adaptation;
        self.r_dot = yaw_accel_estimate(s_now.r, s_prev.r, dt, ac.yaw_accel_cutoff_hz, self.r_dot)?;
        let yaw_gate = s_now.r.abs() >= ac.r_t;

        if s_now.v_x < self.cfg.v_x_min {
            return Ok(EstimateFrame {
                t: s_now.t,
                yaw_gate,
                cond_gate: last.cond_gate,
                adapted: false,
                clamped: false,
                speed_hold: true,
                ..last
            });
        }

        let variant = self.cfg.variant;
        self.dyn_obs = self.dyn_obs.step(s_prev, s_now, dt)?;

        if let Some(k) = self.kin.as_ref() {
            self.kin = Some(k.step(s_prev, s_now, self.correction, dt)?);
        }
        let vy_k = self.kin.as_ref().map_or(f64::NAN, |k| k.v_y());

        let mut cond_gate = true;
        let mut adapted = false;
        let mut clamped = false;
        if variant.adapts() && yaw_gate {
            let sample = build_regression(s_now, vy_k, self.r_dot, &self.cfg.params, self.cfg.v_x_min)?;
            if variant == Variant::Algorithm2 {
                cond_gate = conditioning_gate(&sample, ac.c_t);
            }
            if cond_gate {
                self.adapt = recursive_rwls_step(&self.adapt, &sample, ac, &self.theta_plus);
                adapted = true;
                let (used, c) = clamp_stiffness(&self.adapt.theta_star, &self.theta_plus, ac);
                self.dyn_obs.stiffness = used;
                clamped = c;
                if let Some(diag) = self.diagnostics.as_mut() {
                    diag.record_step(self.frames, &sample, &self.theta_plus, theta_true.map(|t| t - self.theta_plus))?;
                }
            }
        }

        let mut vy_reported = self.dyn_obs.v_y();
        if variant == Variant::HybridSwitch && yaw_gate {
            vy_reported = vy_k;
        }
        if !yaw_gate {
            if let Some(k) = self.kin.as_ref() {
                self.kin = Some(k.reset_from_dyn(&self.dyn_obs, s_now.v_x));
            }
        }
        if self.kin.as_ref().is_some_and(|k| k.variant() == KinVariant::Corrected) {
            self.correction = -self.cfg.params.g * self.dyn_obs.sin_phi() - self.dyn_obs.bias();
        }

        let stiffness = self.dyn_obs.stiffness;
        Ok(EstimateFrame {
            t: s_now.t,
            beta_hat: (vy_reported / s_now.v_x).atan(),
            vy_d: self.dyn_obs.v_y(),
            vy_k,
            sin_phi: self.dyn_obs.sin_phi(),
            d: self.dyn_obs.bias(),
            c_f: stiffness[0],
            c_r: stiffness[1],
            yaw_gate,
            cond_gate,
            adapted,
            clamped,
            speed_hold: false,
        })
    }
}

/// Runs a fresh pipeline over a whole stream. `theta_true`, when given, must
/// have one entry per sample.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    samples: &[SensorSample],
    theta_true: Option<&[Vector2<f64>]>,
) -> Result<(Vec<EstimateFrame>, Option<DiagnosticsTrace>)> {
    let (first, rest) = samples.split_first().ok_or(Error::EmptySeries)?;
    if let Some(t) = theta_true {
        if t.len() != samples.len() {
            return Err(Error::LengthMismatch(t.len(), samples.len()));
        }
    }
    let mut p = Pipeline::new(cfg.clone())?;
    let mut frames = Vec::with_capacity(samples.len());
    frames.push(p.init(first)?);
    let mut prev = first;
    for (i, s) in rest.iter().enumerate() {
        frames.push(p.step(prev, s, theta_true.map(|t| t[i + 1]))?);
        prev = s;
    }
    Ok((frames, p.into_diagnostics()))
}
