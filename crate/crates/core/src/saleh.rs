//! Saleh AM-AM amplifier model: evaluation, per-sample distortion, and
//! closed-form least-squares fitting from normalized two-tone sweeps.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sigchain::ComplexSignal;

/// One transmitter's amplifier fingerprint, `A(r) = alpha r / (1 + beta r^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SalehModel {
    pub alpha: f64,
    pub beta: f64,
}

impl SalehModel {
    /// Classic travelling-wave-tube parameters, used as the reference model.
    pub const REFERENCE: SalehModel = SalehModel {
        alpha: 2.1587,
        beta: 1.1517,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Saleh model needs alpha > 0 and beta >= 0 (got {alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn eval_am_am(&self, r: f64) -> f64 {
        self.alpha * r / (1.0 + self.beta * r * r)
    }

    /// Amplitude-only distortion; the phase of every sample is kept.
    pub fn apply_pa(&self, signal: &ComplexSignal) -> ComplexSignal {
        ComplexSignal::new(
            signal.samples.iter().map(|&z| self.distort(z)).collect(),
            signal.sample_rate,
        )
    }

    #[inline]
    pub fn distort(&self, z: Complex64) -> Complex64 {
        // A(r)/r is finite at r = 0, so no special case is needed
        z * (self.alpha / (1.0 + self.beta * z.norm_sqr()))
    }
}

/// Free-function form of [`SalehModel::eval_am_am`].
pub fn eval_am_am(model: &SalehModel, r: f64) -> f64 {
    model.eval_am_am(r)
}

pub fn apply_pa(model: &SalehModel, signal: &ComplexSignal) -> ComplexSignal {
    model.apply_pa(signal)
}

/// Normalized AM-AM sweep of one device.
#[derive(Clone, Debug, PartialEq)]
pub struct AmAmMeasurement {
    pub device_id: String,
    /// `(r_in, a_out)` pairs sorted by strictly increasing `r_in`.
    pub points: Vec<(f64, f64)>,
}

impl AmAmMeasurement {
    /// Noiseless sweep of `model` at the given input amplitudes.
    pub fn synthesize(device_id: impl Into<String>, model: &SalehModel, r_in: &[f64]) -> Self {
        Self {
            device_id: device_id.into(),
            points: r_in.iter().map(|&r| (r, model.eval_am_am(r))).collect(),
        }
    }

    /// Root-mean-square of `a_out - A(r_in)` over all points.
    pub fn residual_rms(&self, model: &SalehModel) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let ss: f64 = self
            .points
            .iter()
            .map(|&(r, a)| (a - model.eval_am_am(r)).powi(2))
            .sum();
        (ss / self.points.len() as f64).sqrt()
    }
}

/// Fits alpha and beta by ordinary least squares on the linearized model
/// `r / A(r) = 1/alpha + (beta/alpha) r^2`. Points at `r_in = 0` are skipped.
pub fn fit_saleh(meas: &AmAmMeasurement) -> Result<SalehModel> {
    let mut xs = Vec::with_capacity(meas.points.len());
    let mut zs = Vec::with_capacity(meas.points.len());
    for &(r, a) in &meas.points {
        if r == 0.0 {
            continue;
        }
        if !(a > 0.0) {
            return Err(Error::DegenerateFit(format!(
                "device `{}`: non-positive output {a} at r_in={r}",
                meas.device_id
            )));
        }
        xs.push(r * r);
        zs.push(r / a);
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "device `{}`: need at least 2 distinct nonzero r_in, got {}",
            meas.device_id,
            distinct.len()
        )));
    }

    let (slope, intercept) = ols(&xs, &zs);
    if !(intercept > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "device `{}`: fitted intercept {intercept} is not positive",
            meas.device_id
        )));
    }
    let alpha = 1.0 / intercept;
    let mut beta = slope / intercept;
    if beta < -BETA_ROUNDING_TOL {
        return Err(Error::DegenerateFit(format!(
            "device `{}`: fitted beta {beta} is negative",
            meas.device_id
        )));
    }
    // a perfectly linear amplifier fits beta = -1e-17 or so
    if beta < 0.0 {
        beta = 0.0;
    }
    SalehModel::new(alpha, beta)
}

const BETA_ROUNDING_TOL: f64 = 1e-9;

/// Centered ordinary least squares, returns `(slope, intercept)`.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub const MEASUREMENT_HEADER: &str = "device_id,r_in,a_out";
pub const MODEL_HEADER: &str = "device_id,alpha,beta";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{}` is not a number", field.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} is not finite")));
    }
    Ok(v)
}

/// Reads measurement CSV rows (`device_id,r_in,a_out`). The header line is
/// optional. Devices keep their order of first appearance.
pub fn read_measurements<R: BufRead>(reader: R) -> Result<Vec<AmAmMeasurement>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_device: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == MEASUREMENT_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let device = fields[0].trim();
        if device.is_empty() {
            return Err(parse_err(lineno, "empty device_id"));
        }
        let r_in = parse_f64(fields[1], "r_in", lineno)?;
        let a_out = parse_f64(fields[2], "a_out", lineno)?;
        if !(0.0..=1.0).contains(&r_in) {
            return Err(parse_err(lineno, format!("r_in {r_in} outside [0, 1]")));
        }
        if a_out < 0.0 {
            return Err(parse_err(lineno, format!("a_out {a_out} is negative")));
        }
        let points = by_device.entry(device.to_string()).or_insert_with(|| {
            order.push(device.to_string());
            Vec::new()
        });
        if points.iter().any(|&(r, _)| r == r_in) {
            return Err(Error::DuplicatePoint {
                device: device.to_string(),
                r_in,
            });
        }
        points.push((r_in, a_out));
    }
    Ok(order
        .into_iter()
        .map(|device_id| {
            let mut points = by_device.remove(&device_id).unwrap_or_default();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            AmAmMeasurement { device_id, points }
        })
        .collect())
}

pub fn load_measurements(path: impl AsRef<std::path::Path>) -> Result<Vec<AmAmMeasurement>> {
    let file = std::fs::File::open(path)?;
    read_measurements(std::io::BufReader::new(file))
}

pub fn write_models<W: Write>(mut w: W, models: &[(String, SalehModel)]) -> Result<()> {
    writeln!(w, "{MODEL_HEADER}")?;
    for (id, m) in models {
        writeln!(w, "{id},{},{}", m.alpha, m.beta)?;
    }
    Ok(())
}

pub fn read_models<R: BufRead>(reader: R) -> Result<Vec<(String, SalehModel)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == MODEL_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let alpha = parse_f64(fields[1], "alpha", lineno)?;
        let beta = parse_f64(fields[2], "beta", lineno)?;
        let model = SalehModel::new(alpha, beta).map_err(|e| parse_err(lineno, e.to_string()))?;
        out.push((fields[0].trim().to_string(), model));
    }
    Ok(out)
}
