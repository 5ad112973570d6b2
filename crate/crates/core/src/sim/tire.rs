use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TireKind {
    Linear,
    Brush,
}

/// Lateral force law of one axle.
///
/// The brush variant is the parabolic-pressure (Fiala) brush: with
/// `θ = C / (3 μ F_z)` and `x = tan α`,
///
/// ```text
/// F = C x (1 - θ|x| + θ²x²/3)   for |x| < 1/θ
/// F = μ F_z sign(x)             otherwise
/// ```
///
/// so its slope at zero slip is exactly `C` and it saturates at
/// `tan α_sl = 3 μ F_z / C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TireModel {
    pub kind: TireKind,
    /// Cornering stiffness, N/rad.
    pub stiffness: f64,
    /// Peak friction coefficient; unused by the linear law.
    pub mu_peak: f64,
    /// Static normal load, N.
    pub normal_load: f64,
}

impl TireModel {
    pub fn linear(stiffness: f64) -> Self {
        Self {
            kind: TireKind::Linear,
            stiffness,
            mu_peak: f64::INFINITY,
            normal_load: f64::INFINITY,
        }
    }

    pub fn brush(stiffness: f64, mu_peak: f64, normal_load: f64) -> Result<Self> {
        if !(stiffness > 0.0 && mu_peak > 0.0 && normal_load > 0.0) {
            return Err(Error::InvalidParams(format!(
                "brush tire needs positive stiffness, friction and load (got {stiffness}, {mu_peak}, {normal_load})"
            )));
        }
        Ok(Self {
            kind: TireKind::Brush,
            stiffness,
            mu_peak,
            normal_load,
        })
    }

    /// `tan` of the slip angle at which the brush law fully slides.
    pub fn saturation_slip(&self) -> f64 {
        match self.kind {
            TireKind::Linear => f64::INFINITY,
            TireKind::Brush => 3.0 * self.mu_peak * self.normal_load / self.stiffness,
        }
    }

    /// Lateral force for slip `x` (the tangent of the slip angle).
    pub fn force(&self, x: f64) -> f64 {
        let c = self.stiffness;
        match self.kind {
            TireKind::Linear => c * x,
            TireKind::Brush => {
                let x_sl = self.saturation_slip();
                if x.abs() >= x_sl {
                    self.mu_peak * self.normal_load * x.signum()
                } else {
                    let th = 1.0 / x_sl;
                    c * x * (1.0 - th * x.abs() + th * th * x * x / 3.0)
                }
            }
        }
    }

    /// Secant stiffness `F / x`, the stiffness a linear model would need to
    /// produce the same force. Equals `C` at zero slip.
    pub fn effective_stiffness(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.stiffness
        } else {
            self.force(x) / x
        }
    }

    /// Slip producing force `f`; `None` beyond the force the law can deliver.
    pub fn inverse(&self, f: f64) -> Option<f64> {
        match self.kind {
            TireKind::Linear => Some(f / self.stiffness),
            TireKind::Brush => {
                let peak = self.mu_peak * self.normal_load;
                if f.abs() >= peak {
                    return None;
                }
                // monotone on [0, x_sl]
                let (mut lo, mut hi) = (0.0, self.saturation_slip());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.force(mid) < f.abs() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi) * f.signum())
            }
        }
    }
}
