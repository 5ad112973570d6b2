use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptationConfig;
use crate::error::{Error, Result};
use crate::model::VehicleParams;
use crate::pipeline::{ObserverNoise, PipelineConfig, Variant};
use crate::sim::{ScenarioKind, ScenarioSpec, SensorNoise, TireSpec};

/// Contents of a run configuration file (TOML).
///
/// Every field is optional; the defaults are the reference vehicle and
/// estimator tuning.
///
/// ```toml
/// variant = "algorithm2"
///
/// [vehicle]
/// m = 2300.132
///
/// [adaptation]
/// lambda = 0.975
///
/// [scenario]
/// kind = "slalom"
/// noise_scale = 0.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    /// Sample period, s.
    pub dt: f64,
    /// Allowed relative deviation of a log's sample spacing from `dt`.
    pub dt_tolerance: f64,
    pub p0: f64,
    pub x0_dyn: [f64; 4],
    pub v_x_min: f64,
    pub vehicle: VehicleParams,
    pub noise: ObserverNoise,
    pub adaptation: AdaptationConfig,
    pub scenario: ScenarioOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            variant: p.variant,
            dt: p.dt,
            dt_tolerance: 0.1,
            p0: p.p0,
            x0_dyn: p.x0_dyn,
            v_x_min: p.v_x_min,
            vehicle: p.params,
            noise: p.noise,
            adaptation: p.adaptation,
            scenario: ScenarioOverrides::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_tolerance > 0.0 && self.dt_tolerance < 1.0) {
            return Err(Error::Config(format!("dt_tolerance = {} must lie in (0, 1)", self.dt_tolerance)));
        }
        self.pipeline(self.variant).validate()
    }

    pub fn pipeline(&self, variant: Variant) -> PipelineConfig {
        PipelineConfig {
            variant,
            dt: self.dt,
            params: self.vehicle,
            noise: self.noise.clone(),
            adaptation: self.adaptation,
            p0: self.p0,
            x0_dyn: self.x0_dyn,
            v_x_min: self.v_x_min,
            diagnostics: false,
        }
    }
}

/// Per-field overrides applied on top of a scenario preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub kind: Option<ScenarioKind>,
    pub duration: Option<f64>,
    pub speed: Option<f64>,
    pub steer_amplitude: Option<f64>,
    pub target_peak_ay_g: Option<f64>,
    pub bank_deg: Option<f64>,
    pub bias: Option<f64>,
    pub noise: Option<SensorNoise>,
    pub noise_scale: Option<f64>,
    pub tire: Option<TireSpec>,
    pub seed: Option<u64>,
}

impl ScenarioOverrides {
    /// Preset for `kind` (or the configured kind, or slalom) with the
    /// overrides applied. The sample period always follows the run config.
    pub fn resolve(&self, kind: Option<ScenarioKind>, dt: f64) -> Result<ScenarioSpec> {
        let kind = kind.or(self.kind).unwrap_or(ScenarioKind::Slalom);
        let mut s = ScenarioSpec::preset(kind);
        s.dt = dt;
        if let Some(v) = self.duration {
            s.duration = v;
        }
        if let Some(v) = self.speed {
            s.speed = v;
        }
        if let Some(v) = self.steer_amplitude {
            s.steer_amplitude = Some(v);
        }
        if let Some(v) = self.target_peak_ay_g {
            s.target_peak_ay_g = Some(v);
        }
        if let Some(v) = self.bank_deg {
            s.bank_deg = v;
        }
        if let Some(v) = self.bias {
            s.bias = v;
        }
        if let Some(v) = self.noise {
            s.noise = v;
        }
        if let Some(v) = self.noise_scale {
            s.noise_scale = v;
        }
        if let Some(v) = self.tire {
            s.tire = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_tuning() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let p = cfg.pipeline(Variant::Algorithm2);
        assert_eq!(p, PipelineConfig::default());
        assert_eq!(p.params.m, 2300.132);
        assert_eq!(p.noise.w_d, [6.0, 0.5, 0.1, 0.0002]);
        assert_eq!(p.adaptation.lambda, 0.975);
    }

    #[test]
    fn partial_tables_override_single_fields() {
        let cfg = RunConfig::from_toml(
            "variant = \"hybrid_switch\"\n[vehicle]\nm = 1500.0\n[adaptation]\ndelta = 0.05\n[scenario]\nkind = \"steady_circle\"\nbias = 0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::HybridSwitch);
        assert_eq!(cfg.vehicle.m, 1500.0);
        assert_eq!(cfg.vehicle.i_z, 4400.0);
        assert_eq!(cfg.adaptation.delta, 0.05);
        assert_eq!(cfg.adaptation.lambda, 0.975);
        let spec = cfg.scenario.resolve(None, cfg.dt).unwrap();
        assert_eq!(spec.kind, ScenarioKind::SteadyCircle);
        assert_eq!(spec.bias, 0.3);
        assert_eq!(spec.speed, ScenarioSpec::preset(ScenarioKind::SteadyCircle).speed);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("lambda = 0.9").is_err());
        assert!(RunConfig::from_toml("[adaptation]\nlambda = 1.5").is_err());
        assert!(RunConfig::from_toml("dt = -0.01").is_err());
        assert!(RunConfig::from_toml("variant = \"ukf\"").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.scenario.seed = Some(7);
        cfg.scenario.kind = Some(ScenarioKind::StopNTurn);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
