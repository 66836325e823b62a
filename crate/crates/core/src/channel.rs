//! Propagation impairments applied after the amplifier: sub-sample timing
//! error, carrier frequency offset, static multipath fading and AWGN.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::sigchain::ComplexSignal;

/// Half-width of the interpolation kernel in input samples (16 taps per phase).
const INTERP_HALF_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Awgn,
    /// Timing error, frequency error, fading, then noise.
    Dynamic,
}

impl ChannelKind {
    pub fn label(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Dynamic => "dy",
        }
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "dynamic" | "dy" => Ok(ChannelKind::Dynamic),
            other => Err(invalid(format!("unknown channel kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// Target SNR in dB; `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub interp_factor: usize,
    pub cfo_std_hz: f64,
    pub n_taps: usize,
    pub rayleigh_scale: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Awgn,
            snr_db: 20.0,
            interp_factor: 32,
            cfo_std_hz: 1000.0,
            n_taps: 3,
            rayleigh_scale: 0.5,
        }
    }
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            snr_db,
            ..Default::default()
        }
    }

    pub fn dynamic(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Dynamic,
            snr_db,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interp_factor == 0 {
            return Err(invalid("interp_factor must be >= 1"));
        }
        if self.n_taps == 0 {
            return Err(invalid("n_taps must be >= 1"));
        }
        if !(self.rayleigh_scale > 0.0) {
            return Err(invalid("rayleigh_scale must be positive"));
        }
        if !(self.cfo_std_hz >= 0.0) {
            return Err(invalid("cfo_std_hz must be >= 0"));
        }
        if self.snr_db.is_nan() {
            return Err(invalid("snr_db is NaN"));
        }
        Ok(())
    }
}

/// Per-sample complex noise variance for a signal of mean power `power`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Circular complex Gaussian sample with total variance `var`.
#[inline]
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

/// Adds noise referenced to the signal's own mean power.
pub fn awgn<R: Rng + ?Sized>(signal: &ComplexSignal, snr_db: f64, rng: &mut R) -> Result<ComplexSignal> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let power = signal.mean_power();
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let var = noise_variance(power, snr_db);
    Ok(ComplexSignal::new(
        signal
            .samples
            .iter()
            .map(|&z| z + complex_gaussian(rng, var))
            .collect(),
        signal.sample_rate,
    ))
}

fn blackman_sinc(t: f64) -> f64 {
    let half = INTERP_HALF_WIDTH as f64;
    if t.abs() >= half {
        return 0.0;
    }
    let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
    let w = 0.42 + 0.5 * (PI * t / half).cos() + 0.08 * (2.0 * PI * t / half).cos();
    sinc * w
}

/// Taps of polyphase branch `phase` of an `interp`-fold windowed-sinc
/// interpolator, indexed by input offset `-7..=8`. DC gain is 1.
fn interp_branch(interp: usize, phase: usize) -> [f64; 2 * INTERP_HALF_WIDTH] {
    let frac = phase as f64 / interp as f64;
    let mut taps = [0.0; 2 * INTERP_HALF_WIDTH];
    for (i, tap) in taps.iter_mut().enumerate() {
        let j = i as f64 - (INTERP_HALF_WIDTH - 1) as f64;
        *tap = blackman_sinc(frac - j);
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Interpolates by `interp_factor`, picks a uniform random phase and
/// decimates back. Output length equals input length.
pub fn timing_offset<R: Rng + ?Sized>(signal: &ComplexSignal, interp_factor: usize, rng: &mut R) -> ComplexSignal {
    let d = rng.random_range(0..interp_factor.max(1));
    timing_offset_at(signal, interp_factor, d)
}

/// Timing offset with a fixed phase: sample `n` of the output is the
/// band-limited input evaluated at `n + phase / interp_factor`. Samples
/// beyond either edge are taken as zero.
pub fn timing_offset_at(signal: &ComplexSignal, interp_factor: usize, phase: usize) -> ComplexSignal {
    let interp = interp_factor.max(1);
    let phase = phase % interp;
    if phase == 0 {
        return signal.clone();
    }
    let taps = interp_branch(interp, phase);
    let x = &signal.samples;
    let n = x.len() as isize;
    let lead = (INTERP_HALF_WIDTH - 1) as isize;
    let out = (0..n)
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &h) in taps.iter().enumerate() {
                let k = i - lead + t as isize;
                if k >= 0 && k < n {
                    acc += x[k as usize] * h;
                }
            }
            acc
        })
        .collect();
    ComplexSignal::new(out, signal.sample_rate)
}

/// Draws one frequency error `f ~ N(0, cfo_std_hz^2)` for the whole packet.
pub fn freq_offset<R: Rng + ?Sized>(signal: &ComplexSignal, cfo_std_hz: f64, rng: &mut R) -> ComplexSignal {
    let f = draw_cfo(cfo_std_hz, rng);
    freq_offset_hz(signal, f)
}

fn draw_cfo<R: Rng + ?Sized>(cfo_std_hz: f64, rng: &mut R) -> f64 {
    if cfo_std_hz == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, cfo_std_hz).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// Multiplies sample `n` by `exp(j 2 pi f n / fs)`.
pub fn freq_offset_hz(signal: &ComplexSignal, f_hz: f64) -> ComplexSignal {
    if f_hz == 0.0 {
        return signal.clone();
    }
    let step = 2.0 * PI * f_hz / signal.sample_rate;
    ComplexSignal::new(
        signal
            .samples
            .iter()
            .enumerate()
            .map(|(n, &z)| z * Complex64::cis(step * n as f64))
            .collect(),
        signal.sample_rate,
    )
}

/// `n_taps` independent taps with Rayleigh(`scale`) magnitude and uniform phase.
pub fn rayleigh_taps<R: Rng + ?Sized>(n_taps: usize, scale: f64, rng: &mut R) -> Vec<Complex64> {
    (0..n_taps).map(|_| complex_gaussian(rng, 2.0 * scale * scale)).collect()
}

pub fn fading<R: Rng + ?Sized>(signal: &ComplexSignal, n_taps: usize, rayleigh_scale: f64, rng: &mut R) -> ComplexSignal {
    let taps = rayleigh_taps(n_taps, rayleigh_scale, rng);
    fading_with(signal, &taps)
}

/// Linear convolution with `taps`, truncated to the input length.
pub fn fading_with(signal: &ComplexSignal, taps: &[Complex64]) -> ComplexSignal {
    let x = &signal.samples;
    let out = (0..x.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(i, h)| h * x[n - i])
                .sum()
        })
        .collect();
    ComplexSignal::new(out, signal.sample_rate)
}

/// Random state of one dynamic-channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDraws {
    pub timing_phase: usize,
    pub cfo_hz: f64,
    pub taps: Vec<Complex64>,
}

impl ChannelDraws {
    /// Draws in application order: timing, frequency, fading.
    pub fn sample<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Self {
        let timing_phase = rng.random_range(0..cfg.interp_factor.max(1));
        let cfo_hz = draw_cfo(cfg.cfo_std_hz, rng);
        let taps = rayleigh_taps(cfg.n_taps, cfg.rayleigh_scale, rng);
        Self {
            timing_phase,
            cfo_hz,
            taps,
        }
    }

    pub fn identity() -> Self {
        Self {
            timing_phase: 0,
            cfo_hz: 0.0,
            taps: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn apply(&self, cfg: &ChannelConfig, signal: &ComplexSignal) -> ComplexSignal {
        let s = timing_offset_at(signal, cfg.interp_factor, self.timing_phase);
        let s = freq_offset_hz(&s, self.cfo_hz);
        fading_with(&s, &self.taps)
    }
}

/// Everything except the additive noise.
pub fn impair<R: Rng + ?Sized>(signal: &ComplexSignal, cfg: &ChannelConfig, rng: &mut R) -> ComplexSignal {
    match cfg.kind {
        ChannelKind::Awgn => signal.clone(),
        ChannelKind::Dynamic => ChannelDraws::sample(cfg, rng).apply(cfg, signal),
    }
}

/// Full channel. Noise power is referenced to the impaired signal, so the
/// delivered SNR is `cfg.snr_db` whatever the fading gain.
pub fn apply_channel<R: Rng + ?Sized>(signal: &ComplexSignal, cfg: &ChannelConfig, rng: &mut R) -> Result<ComplexSignal> {
    cfg.validate()?;
    let impaired = impair(signal, cfg, rng);
    awgn(&impaired, cfg.snr_db, rng)
}
