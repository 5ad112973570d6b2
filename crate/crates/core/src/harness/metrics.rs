use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::log::TruthColumns;
use crate::pipeline::{EstimateFrame, Variant};

/// Root mean square of `est - truth`.
pub fn rms(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    if est.is_empty() {
        return Err(Error::EmptySeries);
    }
    let ss: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / est.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub segment: String,
    pub frames: usize,
    pub rms_beta: Option<f64>,
    pub max_abs_beta_err: Option<f64>,
}

/// Summary of one estimator run. Error metrics are present only when the
/// input carried ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variant: Variant,
    pub frames: usize,
    pub rms_beta: Option<f64>,
    pub max_abs_beta_err: Option<f64>,
    pub rms_phi: Option<f64>,
    pub rms_d: Option<f64>,
    /// Largest `|β̂[i] - β̂[i-1]|` over the run.
    pub max_beta_step: f64,
    /// Largest `|β̂[i] - β̂[i-1]|` on frames where the yaw-rate gate flips;
    /// reported for the switching baseline only.
    pub transition_jump: Option<f64>,
    pub gate_open_frames: usize,
    pub adapted_frames: usize,
    pub clamped_frames: usize,
    pub held_frames: usize,
    pub final_c_f: f64,
    pub final_c_r: f64,
    /// Breakdown by yaw-rate gate state.
    pub segments: Vec<SegmentMetrics>,
}

fn beta_errors(frames: &[EstimateFrame], truth: &[TruthColumns], pick: impl Fn(&EstimateFrame) -> bool) -> (usize, Option<f64>, Option<f64>) {
    let errs: Vec<f64> = frames
        .iter()
        .zip(truth)
        .filter(|(f, _)| pick(f))
        .map(|(f, t)| f.beta_hat - t.beta)
        .collect();
    if errs.is_empty() {
        return (0, None, None);
    }
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    let max = errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    (errs.len(), Some(rms), Some(max))
}

pub fn compute_metrics(variant: Variant, frames: &[EstimateFrame], truth: Option<&[TruthColumns]>) -> Result<Metrics> {
    let last = frames.last().ok_or(Error::EmptySeries)?;
    if let Some(t) = truth {
        if t.len() != frames.len() {
            return Err(Error::LengthMismatch(frames.len(), t.len()));
        }
    }
    let mut max_beta_step = 0.0f64;
    let mut transition = 0.0f64;
    let mut transitions = 0usize;
    for w in frames.windows(2) {
        let step = (w[1].beta_hat - w[0].beta_hat).abs();
        max_beta_step = max_beta_step.max(step);
        if w[1].yaw_gate != w[0].yaw_gate {
            transitions += 1;
            transition = transition.max(step);
        }
    }
    let col = |f: fn(&EstimateFrame) -> f64| frames.iter().map(f).collect::<Vec<_>>();

    let (mut rms_beta, mut max_abs, mut rms_phi, mut rms_d) = (None, None, None, None);
    let mut segments = Vec::new();
    if let Some(t) = truth {
        rms_beta = Some(rms(&col(|f| f.beta_hat), &t.iter().map(|x| x.beta).collect::<Vec<_>>())?);
        max_abs = beta_errors(frames, t, |_| true).2;
        rms_phi = Some(rms(&col(|f| f.sin_phi), &t.iter().map(|x| x.phi.sin()).collect::<Vec<_>>())?);
        rms_d = Some(rms(&col(|f| f.d), &t.iter().map(|x| x.d).collect::<Vec<_>>())?);
        for (name, open) in [("gate_open", true), ("gate_closed", false)] {
            let (n, r, m) = beta_errors(frames, t, |f| f.yaw_gate == open);
            segments.push(SegmentMetrics {
                segment: name.into(),
                frames: n,
                rms_beta: r,
                max_abs_beta_err: m,
            });
        }
    }
    let count = |f: fn(&EstimateFrame) -> bool| frames.iter().filter(|x| f(x)).count();
    Ok(Metrics {
        variant,
        frames: frames.len(),
        rms_beta,
        max_abs_beta_err: max_abs,
        rms_phi,
        rms_d,
        max_beta_step,
        transition_jump: (variant == Variant::HybridSwitch && transitions > 0).then_some(transition),
        gate_open_frames: count(|f| f.yaw_gate),
        adapted_frames: count(|f| f.adapted),
        clamped_frames: count(|f| f.clamped),
        held_frames: count(|f| f.speed_hold),
        final_c_f: last.c_f,
        final_c_r: last.c_r,
        segments,
    })
}

/// Fixed-width text table, one row per variant.
pub fn metrics_table(rows: &[Metrics]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
    let mut out = format!(
        "{:<14} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8} {:>10} {:>10}\n",
        "variant", "frames", "rms_beta", "max_beta", "rms_phi", "rms_d", "max_step", "jump", "adapted", "c_f", "c_r"
    );
    for m in rows {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9.5} {:>9} {:>8} {:>10.0} {:>10.0}",
            m.variant.name(),
            m.frames,
            opt(m.rms_beta),
            opt(m.max_abs_beta_err),
            opt(m.rms_phi),
            opt(m.rms_d),
            m.max_beta_step,
            opt(m.transition_jump),
            m.adapted_frames,
            m.final_c_f,
            m.final_c_r,
        );
    }
    out
}
