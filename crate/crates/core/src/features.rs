//! Averaged-spectrum features: non-overlapping rectangular windows, one DFT
//! per window, complex mean across windows, then a real representation.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::sigchain::ComplexSignal;

pub const WINDOW: usize = 256;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized forward DFT, DC first.
pub fn fft(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// Element-wise sum of the `len / window` complete windows, and their count.
pub fn fold_windows(samples: &[Complex64], window: usize) -> Result<(Vec<Complex64>, usize)> {
    if window == 0 {
        return Err(invalid("window must be positive"));
    }
    let count = samples.len() / window;
    if count == 0 {
        return Err(Error::TooShort {
            len: samples.len(),
            needed: window,
        });
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); window];
    for chunk in samples.chunks_exact(window) {
        for (a, x) in acc.iter_mut().zip(chunk) {
            *a += x;
        }
    }
    Ok((acc, count))
}

/// Mean of the per-window DFTs. By linearity this is the DFT of the mean
/// window, which is what is computed.
pub fn averaged_fft(signal: &ComplexSignal, window: usize) -> Result<Vec<Complex64>> {
    let (folded, count) = fold_windows(&signal.samples, window)?;
    Ok(spectrum_of_fold(folded, count))
}

pub fn spectrum_of_fold(mut folded: Vec<Complex64>, count: usize) -> Vec<Complex64> {
    fft(&mut folded);
    let inv = 1.0 / count as f64;
    folded.iter_mut().for_each(|c| *c *= inv);
    folded
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Representation {
    Magnitude,
    Cartesian,
    Polar,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::Magnitude,
        Representation::Cartesian,
        Representation::Polar,
    ];

    pub fn columns(self) -> usize {
        match self {
            Representation::Magnitude => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::Magnitude => "magnitude",
            Representation::Cartesian => "cartesian",
            Representation::Polar => "polar",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "magnitude" | "mag" => Ok(Representation::Magnitude),
            "cartesian" | "cart" => Ok(Representation::Cartesian),
            "polar" => Ok(Representation::Polar),
            other => Err(invalid(format!("unknown representation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMode {
    pub representation: Representation,
    /// Scale the flattened feature to unit L2 norm. Off by default, since
    /// the overall level carries the amplifier gain.
    pub normalize: bool,
}

impl Default for FeatureMode {
    fn default() -> Self {
        Self {
            representation: Representation::Magnitude,
            normalize: false,
        }
    }
}

/// A `rows x cols` real matrix stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub representation: Representation,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn cols(&self) -> usize {
        self.representation.columns()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[col * self.rows + row]
    }

    /// Row-major `rows x cols` image, the layout the networks consume.
    pub fn to_input(&self) -> Vec<f32> {
        let cols = self.cols();
        let mut out = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for c in 0..cols {
                out.push(self.get(r, c) as f32);
            }
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Real representation of the coefficients, optionally scaled to unit norm.
/// An all-zero input stays all-zero.
pub fn represent(coeffs: &[Complex64], mode: FeatureMode) -> FeatureVector {
    let n = coeffs.len();
    let mut values = Vec::with_capacity(n * mode.representation.columns());
    match mode.representation {
        Representation::Magnitude => values.extend(coeffs.iter().map(|c| c.norm())),
        Representation::Cartesian => {
            values.extend(coeffs.iter().map(|c| c.re));
            values.extend(coeffs.iter().map(|c| c.im));
        }
        Representation::Polar => {
            values.extend(coeffs.iter().map(|c| c.norm()));
            values.extend(coeffs.iter().map(|c| {
                let a = c.arg();
                if a <= -PI {
                    PI
                } else {
                    a
                }
            }));
        }
    }
    let mut fv = FeatureVector {
        representation: mode.representation,
        rows: n,
        values,
    };
    if mode.normalize {
        let norm = fv.l2_norm();
        if norm > 0.0 {
            fv.values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    fv
}

/// Debug dump: one row per vector, `label,f0..f{k-1}`, values column-major.
pub fn write_feature_csv<W: Write>(mut w: W, rows: &[(usize, FeatureVector)]) -> Result<()> {
    let width = rows.first().map(|(_, f)| f.values.len()).unwrap_or(WINDOW);
    let mut header = String::from("label");
    for i in 0..width {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}")?;
    for (label, fv) in rows {
        if fv.values.len() != width {
            return Err(Error::Shape(format!(
                "feature width {} differs from {width}",
                fv.values.len()
            )));
        }
        let mut line = label.to_string();
        for v in &fv.values {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn raw(rep: Representation) -> FeatureMode {
        FeatureMode {
            representation: rep,
            normalize: false,
        }
    }

    #[test]
    fn zero_and_constant_inputs() {
        let z = averaged_fft(&ComplexSignal::zeros(1024, 1e6), WINDOW).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));

        let k = c(0.3, -0.2);
        let s = ComplexSignal::new(vec![k; 256], 1e6);
        let f = averaged_fft(&s, WINDOW).unwrap();
        assert!((f[0] - k * 256.0).norm() < 1e-12);
        assert!(f[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn window_count_and_short_input() {
        let (_, count) = fold_windows(&vec![c(1.0, 0.0); 16384], WINDOW).unwrap();
        assert_eq!(count, 64);
        let (_, count) = fold_windows(&vec![c(1.0, 0.0); 600], WINDOW).unwrap();
        assert_eq!(count, 2);
        assert!(matches!(
            averaged_fft(&ComplexSignal::zeros(255, 1e6), WINDOW),
            Err(Error::TooShort { len: 255, needed: 256 })
        ));
    }

    #[test]
    fn representations() {
        let mut e0 = vec![c(0.0, 0.0); 256];
        e0[0] = c(1.0, 0.0);
        let m = represent(&e0, FeatureMode::default());
        assert_eq!(m.values.len(), 256);
        assert_eq!(m.values[0], 1.0);
        assert!(m.values[1..].iter().all(|&v| v == 0.0));

        let mut x = vec![c(0.0, 0.0); 256];
        x[3] = c(1.0, 1.0);
        let p = represent(&x, raw(Representation::Polar));
        assert_eq!((p.rows, p.cols()), (256, 2));
        assert!((p.get(3, 0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((p.get(3, 1) - PI / 4.0).abs() < 1e-15);
        let q = represent(&x, raw(Representation::Cartesian));
        assert_eq!((q.get(3, 0), q.get(3, 1)), (1.0, 1.0));
        assert_eq!(q.values.len(), 512);
    }

    #[test]
    fn polar_angle_range() {
        let x = vec![c(-1.0, -0.0), c(-1.0, 0.0), c(0.0, -1.0)];
        let p = represent(&x, raw(Representation::Polar));
        for r in 0..3 {
            let a = p.get(r, 1);
            assert!(a > -PI && a <= PI);
        }
        assert_eq!(p.get(0, 1), PI);
    }

    #[test]
    fn zero_features_stay_zero() {
        let x = vec![c(0.0, 0.0); 256];
        for rep in Representation::ALL {
            let f = represent(&x, FeatureMode { representation: rep, normalize: true });
            assert!(f.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn input_layout_is_row_major() {
        let mut x = vec![c(0.0, 0.0); 4];
        x[1] = c(2.0, 3.0);
        let f = represent(&x, raw(Representation::Cartesian));
        assert_eq!(f.to_input(), vec![0.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn csv_dump() {
        let f = represent(&[c(1.0, 0.0), c(0.0, 0.0)], raw(Representation::Magnitude));
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &[(4, f)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,f0,f1\n4,1,0\n");
    }

    fn random_signal(rng: &mut SimRng, n: usize) -> ComplexSignal {
        ComplexSignal::new(
            (0..n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect(),
            1e6,
        )
    }

    proptest! {
        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = SimRng::seed_from_u64(seed);
            let x = random_signal(&mut rng, 768);
            let y = random_signal(&mut rng, 768);
            let mix = ComplexSignal::new(
                x.samples.iter().zip(&y.samples).map(|(p, q)| p * a + q * b).collect(),
                1e6,
            );
            let fx = averaged_fft(&x, WINDOW).unwrap();
            let fy = averaged_fft(&y, WINDOW).unwrap();
            let fm = averaged_fft(&mix, WINDOW).unwrap();
            for k in 0..WINDOW {
                prop_assert!((fm[k] - (fx[k] * a + fy[k] * b)).norm() < 1e-10);
            }
        }

        #[test]
        fn scale_and_rotation_invariance(seed in any::<u64>(), lambda in 0.01f64..100.0, phi in -3.0f64..3.0) {
            let mut rng = SimRng::seed_from_u64(seed);
            let x = random_signal(&mut rng, 512);
            let coeffs = averaged_fft(&x, WINDOW).unwrap();
            // polar mixes magnitudes with angles, so only these two scale out
            for rep in [Representation::Magnitude, Representation::Cartesian] {
                let mode = FeatureMode { representation: rep, normalize: true };
                let base = represent(&coeffs, mode);
                let scaled: Vec<Complex64> = coeffs.iter().map(|z| z * lambda).collect();
                let s = represent(&scaled, mode);
                for (p, q) in base.values.iter().zip(&s.values) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
            let rot = ComplexSignal::new(x.samples.iter().map(|z| z * Complex64::cis(phi)).collect(), 1e6);
            let m0 = represent(&coeffs, FeatureMode::default());
            let m1 = represent(&averaged_fft(&rot, WINDOW).unwrap(), FeatureMode::default());
            for (p, q) in m0.values.iter().zip(&m1.values) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
