//! CSV sensor logs.
//!
//! Header row, SI units, one sample per row:
//! `t, ax, ay_sen, r, vx, delta_f[, beta_true, vy_true, phi_true, d_true]`.
//! Floats are written in shortest round-trip form, so a written log reads
//! back bit-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SensorSample;
use crate::sim::TruthSample;

pub const SENSOR_COLUMNS: [&str; 6] = ["t", "ax", "ay_sen", "r", "vx", "delta_f"];
pub const TRUTH_COLUMNS: [&str; 4] = ["beta_true", "vy_true", "phi_true", "d_true"];

/// Ground truth carried by a log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthColumns {
    pub beta: f64,
    pub v_y: f64,
    /// rad
    pub phi: f64,
    pub d: f64,
}

impl From<&TruthSample> for TruthColumns {
    fn from(t: &TruthSample) -> Self {
        Self {
            beta: t.beta,
            v_y: t.v_y,
            phi: t.phi,
            d: t.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub samples: Vec<SensorSample>,
    pub truth: Option<Vec<TruthColumns>>,
}

pub fn write_log<W: Write>(out: W, samples: &[SensorSample], truth: Option<&[TruthColumns]>) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != samples.len() {
            return Err(Error::LengthMismatch(t.len(), samples.len()));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SENSOR_COLUMNS.to_vec();
    if truth.is_some() {
        header.extend(TRUTH_COLUMNS);
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (i, s) in samples.iter().enumerate() {
        row.clear();
        row.extend([s.t, s.a_x, s.a_y_sen, s.r, s.v_x, s.delta_f].map(|v| v.to_string()));
        if let Some(t) = truth {
            let t = &t[i];
            row.extend([t.beta, t.v_y, t.phi, t.d].map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_log_file(path: impl AsRef<Path>, samples: &[SensorSample], truth: Option<&[TruthColumns]>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(std::io::BufWriter::new(f), samples, truth)
}

/// Parses and validates a log.
///
/// Every value must be finite, timestamps strictly increasing and, when
/// `expected_dt` is given, each spacing within `tolerance · dt` of it. Truth
/// columns are all-or-nothing. Row numbers in errors count data rows from 1.
pub fn read_log<R: Read>(input: R, expected_dt: Option<f64>, tolerance: f64) -> Result<SensorLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut sensor_idx = [0usize; 6];
    for (slot, name) in sensor_idx.iter_mut().zip(SENSOR_COLUMNS) {
        *slot = find(name).ok_or_else(|| Error::MissingColumn(name.into()))?;
    }
    let truth_idx: Vec<Option<usize>> = TRUTH_COLUMNS.iter().map(|n| find(n)).collect();
    let has_truth = truth_idx.iter().any(Option::is_some);
    if has_truth {
        if let Some(k) = truth_idx.iter().position(Option::is_none) {
            return Err(Error::MissingColumn(TRUTH_COLUMNS[k].into()));
        }
    }
    if let Some(extra) = header
        .iter()
        .find(|h| !SENSOR_COLUMNS.contains(h) && !TRUTH_COLUMNS.contains(h))
    {
        return Err(Error::Config(format!("log has unexpected column `{extra}`")));
    }

    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).ok_or_else(|| Error::Row {
                row,
                msg: format!("missing value for `{name}`"),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                row,
                msg: format!("`{name}` = {raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row,
                    msg: format!("`{name}` is not finite"),
                });
            }
            Ok(v)
        };
        let v: Vec<f64> = sensor_idx
            .iter()
            .zip(SENSOR_COLUMNS)
            .map(|(&k, n)| field(k, n))
            .collect::<Result<_>>()?;
        let s = SensorSample {
            t: v[0],
            a_x: v[1],
            a_y_sen: v[2],
            r: v[3],
            v_x: v[4],
            delta_f: v[5],
        };
        if let Some(prev) = samples.last() {
            let prev: &SensorSample = prev;
            let step = s.t - prev.t;
            if !(step > 0.0) {
                return Err(Error::Row {
                    row,
                    msg: format!("timestamp {} does not increase (previous {})", s.t, prev.t),
                });
            }
            if let Some(dt) = expected_dt {
                if (step - dt).abs() > tolerance * dt {
                    return Err(Error::Row {
                        row,
                        msg: format!("sample spacing {step} s deviates more than {:.0}% from {dt} s", tolerance * 100.0),
                    });
                }
            }
        }
        samples.push(s);
        if has_truth {
            let t: Vec<f64> = truth_idx
                .iter()
                .zip(TRUTH_COLUMNS)
                .map(|(k, n)| field(k.unwrap(), n))
                .collect::<Result<_>>()?;
            truth.push(TruthColumns {
                beta: t[0],
                v_y: t[1],
                phi: t[2],
                d: t[3],
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(SensorLog {
        samples,
        truth: has_truth.then_some(truth),
    })
}

pub fn read_log_file(path: impl AsRef<Path>, expected_dt: Option<f64>, tolerance: f64) -> Result<SensorLog> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(std::io::BufReader::new(f), expected_dt, tolerance)
}
