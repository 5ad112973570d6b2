use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use crate::diagnostics::DiagnosticsTrace;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::log::{SensorLog, TruthColumns};
use crate::harness::metrics::{compute_metrics, Metrics};
use crate::model::SensorSample;
use crate::pipeline::{run_pipeline, EstimateFrame, Variant};
use crate::sim::Scenario;

/// Immutable input shared by every variant of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInput {
    pub samples: Vec<SensorSample>,
    pub truth: Option<Vec<TruthColumns>>,
    /// True stiffness per frame; only simulated inputs have it.
    pub true_stiffness: Option<Vec<Vector2<f64>>>,
}

impl From<SensorLog> for RunInput {
    fn from(log: SensorLog) -> Self {
        Self {
            samples: log.samples,
            truth: log.truth,
            true_stiffness: None,
        }
    }
}

impl From<&Scenario> for RunInput {
    fn from(s: &Scenario) -> Self {
        Self {
            samples: s.samples.clone(),
            truth: Some(s.truth.iter().map(TruthColumns::from).collect()),
            true_stiffness: Some(s.true_stiffness()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub variant: Variant,
    pub frames: Vec<EstimateFrame>,
    pub diagnostics: Option<DiagnosticsTrace>,
    pub metrics: Metrics,
}

pub fn run_variant(cfg: &RunConfig, variant: Variant, input: &RunInput, diagnostics: bool) -> Result<RunOutput> {
    let mut p = cfg.pipeline(variant);
    p.diagnostics = diagnostics;
    let (frames, diag) = run_pipeline(&p, &input.samples, input.true_stiffness.as_deref())?;
    let metrics = compute_metrics(variant, &frames, input.truth.as_deref())?;
    Ok(RunOutput {
        variant,
        frames,
        diagnostics: diag,
        metrics,
    })
}

/// Runs each variant on its own thread over the shared input. Results come
/// back in the order of `variants`.
pub fn compare(cfg: &RunConfig, variants: &[Variant], input: &RunInput, diagnostics: bool) -> Result<Vec<RunOutput>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|&v| scope.spawn(move || run_variant(cfg, v, input, diagnostics)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

const FRAME_COLUMNS: [&str; 13] = [
    "t", "beta_hat", "vy_d", "vy_k", "sin_phi_hat", "d_hat", "c_f_hat", "c_r_hat", "yaw_gate", "cond_gate", "adapted",
    "clamped", "speed_hold",
];
const DIAG_COLUMNS: [&str; 13] = [
    "rank_skip", "sigma1", "sigma2", "mu1", "mu2", "eta_cond_value", "eta_cond_ok", "cond_gain", "eps1", "eps2", "eta1", "eta2",
    "popov_sum",
];

fn num(v: f64) -> String {
    v.to_string()
}

fn flag(b: bool) -> String {
    (b as u8).to_string()
}

/// Writes a per-frame trace: the estimate and its gate/clamp flags, then
/// ground truth and diagnostics columns when supplied. Diagnostics cells are
/// empty on frames without an adaptation step.
pub fn write_trace<W: Write>(
    out: W,
    frames: &[EstimateFrame],
    truth: Option<&[TruthColumns]>,
    diagnostics: Option<&DiagnosticsTrace>,
) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != frames.len() {
            return Err(Error::LengthMismatch(frames.len(), t.len()));
        }
    }
    let mut header: Vec<&str> = FRAME_COLUMNS.to_vec();
    if truth.is_some() {
        header.extend(crate::harness::log::TRUTH_COLUMNS);
    }
    let mut steps = HashMap::new();
    let mut subs = HashMap::new();
    if let Some(d) = diagnostics {
        header.extend(DIAG_COLUMNS);
        steps.extend(d.steps.iter().map(|s| (s.frame, s)));
        for pair in d.substeps.chunks(2) {
            subs.insert(pair[0].frame, pair);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (i, f) in frames.iter().enumerate() {
        row.clear();
        row.extend([f.t, f.beta_hat, f.vy_d, f.vy_k, f.sin_phi, f.d, f.c_f, f.c_r].map(num));
        row.extend([f.yaw_gate, f.cond_gate, f.adapted, f.clamped, f.speed_hold].map(flag));
        if let Some(t) = truth {
            let t = &t[i];
            row.extend([t.beta, t.v_y, t.phi, t.d].map(num));
        }
        if let Some(d) = diagnostics {
            row.push(flag(d.skipped.contains(&i)));
            match (steps.get(&i), subs.get(&i)) {
                (Some(s), Some(p)) if p.len() == 2 => {
                    row.extend([s.sigma[0], s.sigma[1], s.mu[0], s.mu[1], s.eta_cond_value].map(num));
                    row.push(flag(s.eta_cond_ok));
                    row.push(num(s.cond_gain));
                    row.extend([p[0].eps, p[1].eps, p[0].eta, p[1].eta, p[1].popov].map(num));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), DIAG_COLUMNS.len() - 1)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_trace_file(
    path: impl AsRef<Path>,
    frames: &[EstimateFrame],
    truth: Option<&[TruthColumns]>,
    diagnostics: Option<&DiagnosticsTrace>,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(std::io::BufWriter::new(f), frames, truth, diagnostics)
}

pub fn write_metrics_json(path: impl AsRef<Path>, metrics: &[Metrics]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), metrics)?;
    Ok(())
}
