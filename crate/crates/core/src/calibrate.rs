//! Calibration of model terms against measured reading times and file sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative run-to-run fluctuation attached to reports by default.
pub const DEFAULT_MEASUREMENT_UNCERTAINTY: f64 = 0.02;

/// Initialization time of a read job, in seconds.
pub const DEFAULT_T_INITIAL: f64 = 9.0;

/// One measured stream of one scheme, with the model terms it is compared to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub scheme_id: String,
    pub stream_id: String,
    /// Seconds needed to read the stream once.
    pub measured_time: f64,
    /// File size in kB.
    pub measured_size: f64,
    pub n_lines: usize,
    /// Model read-time predictor for this stream (expected events read per job).
    pub model_t_term: f64,
    /// Model size of the stream in kB.
    pub model_s_term: f64,
}

/// Least-squares line `y ≈ slope · x + intercept` and its fit quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Relative measurement uncertainty annotation.
    pub measurement_uncertainty: f64,
}

impl CalibrationReport {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares of `y` on `x`.
///
/// `R² = 1 - SS_res / SS_tot`; when `y` is constant (`SS_tot = 0`) the
/// report carries `R² = 0`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<CalibrationReport> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "regression x vs y length",
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ConstantPredictor);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - (slope * xi + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 0.0 } else { 1.0 - ss_res / syy };
    Ok(CalibrationReport {
        slope,
        intercept,
        r_squared,
        n_points: n,
        measurement_uncertainty: DEFAULT_MEASUREMENT_UNCERTAINTY,
    })
}

/// Measured read cost corrected for job initialization:
/// `Σ_streams n_lines · (measured_time - t_initial)`.
pub fn t_real(measurements: &[MeasurementRecord], t_initial: f64) -> Result<f64> {
    let mut total = 0.0;
    for m in measurements {
        let corrected = m.measured_time - t_initial;
        if corrected < 0.0 {
            return Err(Error::NegativeCorrectedTime {
                scheme_id: m.scheme_id.clone(),
                stream_id: m.stream_id.clone(),
                measured_time: m.measured_time,
                t_initial,
            });
        }
        total += m.n_lines as f64 * corrected;
    }
    Ok(total)
}

/// Time and size calibrations for one group of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeCalibration {
    /// `None` when all schemes are pooled.
    pub scheme_id: Option<String>,
    pub time: CalibrationReport,
    pub size: CalibrationReport,
}

/// Fits measured time against the model read term and measured size against
/// the model size term, either over all records or per scheme.
pub fn calibrate(measurements: &[MeasurementRecord], pool_schemes: bool) -> Result<Vec<SchemeCalibration>> {
    let fit_group = |scheme_id: Option<String>, group: &[&MeasurementRecord]| -> Result<SchemeCalibration> {
        let xt: Vec<f64> = group.iter().map(|m| m.model_t_term).collect();
        let yt: Vec<f64> = group.iter().map(|m| m.measured_time).collect();
        let xs: Vec<f64> = group.iter().map(|m| m.model_s_term).collect();
        let ys: Vec<f64> = group.iter().map(|m| m.measured_size).collect();
        Ok(SchemeCalibration {
            scheme_id,
            time: fit_linear(&xt, &yt)?,
            size: fit_linear(&xs, &ys)?,
        })
    };
    if pool_schemes {
        let all: Vec<&MeasurementRecord> = measurements.iter().collect();
        return Ok(vec![fit_group(None, &all)?]);
    }
    let mut groups: BTreeMap<&str, Vec<&MeasurementRecord>> = BTreeMap::new();
    for m in measurements {
        groups.entry(m.scheme_id.as_str()).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|(id, group)| fit_group(Some(id.to_string()), &group))
        .collect()
}
