//! Clean baseband generation: constellation mapping, root-raised-cosine
//! pulse shaping and packet assembly.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

pub const DEFAULT_SAMPLE_RATE: f64 = 1e6;

/// A buffer of complex baseband samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|² over all samples (0 for an empty buffer).
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.samples.iter().map(|z| z * k).collect(), self.sample_rate)
    }

    /// Raw interleaved float32 I/Q, little-endian, I first.
    pub fn write_iq_f32<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(self.samples.len() * 8);
        for z in &self.samples {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
}

impl Modulation {
    pub const ALL: [Modulation; 5] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Psk8,
        Modulation::Qam16,
        Modulation::Qam64,
    ];

    pub fn order(self) -> usize {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
            Modulation::Psk8 => 8,
            Modulation::Qam16 => 16,
            Modulation::Qam64 => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Psk8 => "PSK8",
            Modulation::Qam16 => "QAM16",
            Modulation::Qam64 => "QAM64",
        }
    }

    /// Gray-mapped constellation, scaled to unit average power.
    /// Entry `i` is the point for symbol index `i`.
    pub fn constellation(self) -> Vec<Complex64> {
        let m = self.order();
        let mut points = vec![Complex64::new(0.0, 0.0); m];
        match self {
            Modulation::Bpsk => {
                points[0] = Complex64::new(1.0, 0.0);
                points[1] = Complex64::new(-1.0, 0.0);
            }
            Modulation::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                for (i, p) in points.iter_mut().enumerate() {
                    let re = if i & 1 == 0 { a } else { -a };
                    let im = if i & 2 == 0 { a } else { -a };
                    *p = Complex64::new(re, im);
                }
            }
            Modulation::Psk8 => {
                for pos in 0..m {
                    points[gray(pos)] = Complex64::from_polar(1.0, 2.0 * PI * pos as f64 / m as f64);
                }
            }
            Modulation::Qam16 | Modulation::Qam64 => {
                let side = (m as f64).sqrt() as usize;
                let bits = side.trailing_zeros();
                let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
                for pi in 0..side {
                    for pq in 0..side {
                        let idx = (gray(pi) << bits) | gray(pq);
                        let re = (2 * pi) as f64 - (side - 1) as f64;
                        let im = (2 * pq) as f64 - (side - 1) as f64;
                        points[idx] = Complex64::new(re, im) / scale;
                    }
                }
            }
        }
        points
    }
}

fn gray(n: usize) -> usize {
    n ^ (n >> 1)
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BPSK" => Ok(Modulation::Bpsk),
            "QPSK" => Ok(Modulation::Qpsk),
            "PSK8" | "8PSK" => Ok(Modulation::Psk8),
            "QAM16" | "16QAM" => Ok(Modulation::Qam16),
            "QAM64" | "64QAM" => Ok(Modulation::Qam64),
            other => Err(invalid(format!("unknown modulation `{other}`"))),
        }
    }
}

pub fn modulate(indices: &[usize], modulation: Modulation) -> Result<Vec<Complex64>> {
    let points = modulation.constellation();
    indices
        .iter()
        .map(|&i| {
            points.get(i).copied().ok_or(Error::IndexOutOfRange {
                index: i,
                size: points.len(),
            })
        })
        .collect()
}

/// Nearest-point decision.
pub fn demodulate(symbols: &[Complex64], modulation: Modulation) -> Vec<usize> {
    let points = modulation.constellation();
    symbols
        .iter()
        .map(|s| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in points.iter().enumerate() {
                let d = (s - p).norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Root-raised-cosine taps: `span * sps + 1` symmetric taps with unit energy.
pub fn rrc_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let center = (n - 1) as f64 / 2.0;
    let singular = 1.0 / (4.0 * beta);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - center) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - singular).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    // mirror so the two halves are bit-identical
    for i in 0..n / 2 {
        taps[n - 1 - i] = taps[i];
    }
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    taps
}

/// Zero-insertion upsampling by `sps` followed by filtering with `taps`.
/// The output is exactly `symbols.len() * sps` samples, aligned on the
/// filter's group delay.
pub fn pulse_shape(symbols: &[Complex64], taps: &[f64], sps: usize) -> ComplexSignal {
    let out_len = symbols.len() * sps;
    let ntaps = taps.len();
    let delay = (ntaps.saturating_sub(1)) / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); out_len];
    if symbols.is_empty() || ntaps == 0 {
        return ComplexSignal::new(out, DEFAULT_SAMPLE_RATE);
    }
    // Polyphase form: output m (before the delay trim) with m = q*sps + p
    // only sees taps p, p+sps, ... applied to symbols q, q-1, ...
    let phases: Vec<Vec<f64>> = (0..sps)
        .map(|p| {
            let mut t: Vec<f64> = taps.iter().skip(p).step_by(sps).copied().collect();
            t.reverse();
            t
        })
        .collect();
    let re: Vec<f64> = symbols.iter().map(|z| z.re).collect();
    let im: Vec<f64> = symbols.iter().map(|z| z.im).collect();
    for (n, y) in out.iter_mut().enumerate() {
        let m = n + delay;
        let (q, p) = (m / sps, m % sps);
        let branch = &phases[p];
        let len = branch.len();
        // symbols q+1-len ..= q, clipped to the packet
        let hi = q.min(symbols.len() - 1);
        let lo = (q + 1).saturating_sub(len);
        if lo > hi {
            continue;
        }
        let t = &branch[len - 1 - (q - lo)..len - (q - hi)];
        let (mut ar, mut ai) = (0.0, 0.0);
        for ((tv, xr), xi) in t.iter().zip(&re[lo..=hi]).zip(&im[lo..=hi]) {
            ar += tv * xr;
            ai += tv * xi;
        }
        *y = Complex64::new(ar, ai);
    }
    ComplexSignal::new(out, DEFAULT_SAMPLE_RATE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataMode {
    /// Fresh random symbols for every packet.
    Random,
    /// One fixed random packet reused for every sample.
    Same,
}

impl DataMode {
    /// Curve label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            DataMode::Random => "df",
            DataMode::Same => "sm",
        }
    }
}

impl FromStr for DataMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" | "df" => Ok(DataMode::Random),
            "same" | "sm" => Ok(DataMode::Same),
            other => Err(invalid(format!("unknown data mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketSpec {
    pub length_symbols: usize,
    pub modulation: Modulation,
    pub sps: usize,
    pub rrc_beta: f64,
    pub rrc_span: usize,
    pub data_mode: DataMode,
    pub same_seed: u64,
    pub sample_rate: f64,
}

impl Default for PacketSpec {
    fn default() -> Self {
        Self {
            length_symbols: 8192,
            modulation: Modulation::Qpsk,
            sps: 2,
            rrc_beta: 0.2,
            rrc_span: 10,
            data_mode: DataMode::Random,
            same_seed: 0x5a11_e5ee_d000_0001,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl PacketSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length_symbols < self.rrc_span || self.length_symbols == 0 {
            return Err(invalid(format!(
                "length_symbols {} must be at least rrc_span {}",
                self.length_symbols, self.rrc_span
            )));
        }
        if self.sps == 0 {
            return Err(invalid("sps must be >= 1"));
        }
        if !(self.rrc_beta > 0.0 && self.rrc_beta <= 1.0) {
            return Err(invalid(format!("rrc_beta {} outside (0, 1]", self.rrc_beta)));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample_rate must be positive"));
        }
        Ok(())
    }

    pub fn samples_per_packet(&self) -> usize {
        self.length_symbols * self.sps
    }

    /// Symbol indices of one packet. SAME mode ignores `rng`.
    pub fn symbol_indices<R: Rng + ?Sized>(&self, modulation: Modulation, rng: &mut R) -> Vec<usize> {
        let m = modulation.order();
        match self.data_mode {
            DataMode::Random => (0..self.length_symbols).map(|_| rng.random_range(0..m)).collect(),
            DataMode::Same => {
                let mut fixed = SimRng::seed_from_u64(self.same_seed);
                (0..self.length_symbols).map(|_| fixed.random_range(0..m)).collect()
            }
        }
    }
}

/// One peak-normalized packet with the spec's modulation.
pub fn make_packet<R: Rng + ?Sized>(spec: &PacketSpec, rng: &mut R) -> Result<ComplexSignal> {
    make_packet_with(spec, spec.modulation, rng)
}

/// Like [`make_packet`] but with an explicit modulation (used by mixtures).
pub fn make_packet_with<R: Rng + ?Sized>(
    spec: &PacketSpec,
    modulation: Modulation,
    rng: &mut R,
) -> Result<ComplexSignal> {
    spec.validate()?;
    let indices = spec.symbol_indices(modulation, rng);
    let symbols = modulate(&indices, modulation)?;
    let taps = rrc_taps(spec.rrc_beta, spec.sps, spec.rrc_span);
    let mut shaped = pulse_shape(&symbols, &taps, spec.sps);
    shaped.sample_rate = spec.sample_rate;
    normalize_peak(&shaped)
}

/// Scales the signal so its largest sample magnitude is 1.
pub fn normalize_peak(signal: &ComplexSignal) -> Result<ComplexSignal> {
    let peak = signal.samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max).sqrt();
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::ZeroSignal);
    }
    let inv = 1.0 / peak;
    Ok(ComplexSignal::new(
        signal.samples.iter().map(|z| z * inv).collect(),
        signal.sample_rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bpsk_is_canonical() {
        assert_eq!(modulate(&[0, 1], Modulation::Bpsk).unwrap(), vec![c(1.0, 0.0), c(-1.0, 0.0)]);
    }

    #[test]
    fn constellations_have_unit_power() {
        for m in Modulation::ALL {
            let pts = m.constellation();
            let p = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-12, "{m}: {p}");
        }
    }

    #[test]
    fn qam16_outer_to_inner_ratio() {
        let mags: Vec<f64> = Modulation::Qam16.constellation().iter().map(|z| z.norm()).collect();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((max / min - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        // adjacent points on each PSK ring / QAM axis differ by one bit
        let pts = Modulation::Psk8.constellation();
        for a in 0..8 {
            for b in 0..8 {
                let d = (pts[a] - pts[b]).norm();
                if a != b && d < 0.8 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
        let pts = Modulation::Qam64.constellation();
        let step = (pts[0] - pts[1]).norm().min((pts[0] - pts[8]).norm());
        for a in 0..64 {
            for b in 0..64 {
                if a != b && ((pts[a] - pts[b]).norm() - step).abs() < 1e-9 {
                    assert_eq!((a ^ b).count_ones(), 1, "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn out_of_range_index() {
        assert!(matches!(
            modulate(&[4], Modulation::Qpsk),
            Err(Error::IndexOutOfRange { index: 4, size: 4 })
        ));
    }

    #[test]
    fn demodulate_round_trips() {
        let mut rng = SimRng::seed_from_u64(3);
        for m in Modulation::ALL {
            let idx: Vec<usize> = (0..500).map(|_| rng.random_range(0..m.order())).collect();
            assert_eq!(demodulate(&modulate(&idx, m).unwrap(), m), idx);
        }
    }

    #[test]
    fn rrc_symmetric_and_unit_energy() {
        let taps = rrc_taps(0.2, 2, 10);
        assert_eq!(taps.len(), 21);
        for i in 0..taps.len() {
            assert_eq!(taps[i], taps[taps.len() - 1 - i]);
        }
        assert!((taps.iter().map(|t| t * t).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rrc_singular_point_is_continuous() {
        // beta = 0.25, sps = 4 puts t = ±1 exactly on the grid
        let taps = rrc_taps(0.25, 4, 8);
        let center = 16;
        let at = taps[center + 4];
        let near = (taps[center + 3] + taps[center + 5]) / 2.0;
        assert!((at - near).abs() < 0.1, "{at} vs {near}");
        assert!(taps.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn pulse_shape_lengths_and_impulse() {
        let taps = rrc_taps(0.2, 2, 10);
        let syms = vec![c(1.0, 0.0); 8192];
        assert_eq!(pulse_shape(&syms, &taps, 2).len(), 16384);

        let one = pulse_shape(&[c(1.0, 0.0)], &taps, 2);
        assert_eq!(one.samples, vec![c(taps[10], 0.0), c(taps[11], 0.0)]);

        let zero = pulse_shape(&vec![c(0.0, 0.0); 64], &taps, 2);
        assert!(zero.samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn pulse_shape_matches_full_convolution() {
        let taps = rrc_taps(0.35, 4, 6);
        let mut rng = SimRng::seed_from_u64(9);
        let syms: Vec<Complex64> = (0..40).map(|_| c(rng.random(), rng.random())).collect();
        let mut up = vec![c(0.0, 0.0); syms.len() * 4];
        for (k, s) in syms.iter().enumerate() {
            up[k * 4] = *s;
        }
        let mut full = vec![c(0.0, 0.0); up.len() + taps.len() - 1];
        for (i, u) in up.iter().enumerate() {
            for (j, t) in taps.iter().enumerate() {
                full[i + j] += u * t;
            }
        }
        let shaped = pulse_shape(&syms, &taps, 4);
        let d = (taps.len() - 1) / 2;
        for (n, y) in shaped.samples.iter().enumerate() {
            assert!((y - full[n + d]).norm() < 1e-12);
        }
    }

    #[test]
    fn packets_same_vs_random() {
        let mut spec = PacketSpec {
            length_symbols: 512,
            data_mode: DataMode::Same,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(1);
        let a = make_packet(&spec, &mut rng).unwrap();
        let b = make_packet(&spec, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.peak(), 1.0);

        spec.data_mode = DataMode::Random;
        let a = make_packet(&spec, &mut rng).unwrap();
        let b = make_packet(&spec, &mut rng).unwrap();
        assert_ne!(a, b);
        assert!((a.peak() - 1.0).abs() < 1e-15);
        assert_eq!(a.len(), 1024);
    }

    #[test]
    fn normalize_peak_cases() {
        let s = ComplexSignal::new(vec![c(0.5, 0.0), c(0.0, 0.25)], 1e6);
        let n = normalize_peak(&s).unwrap();
        assert_eq!(n.samples, vec![c(1.0, 0.0), c(0.0, 0.5)]);
        assert_eq!(normalize_peak(&n).unwrap(), n);
        assert!(matches!(
            normalize_peak(&ComplexSignal::zeros(4, 1e6)),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn invalid_packet_specs() {
        let base = PacketSpec::default();
        assert!(PacketSpec { length_symbols: 5, ..base.clone() }.validate().is_err());
        assert!(PacketSpec { sps: 0, ..base.clone() }.validate().is_err());
        assert!(PacketSpec { rrc_beta: 0.0, ..base.clone() }.validate().is_err());
        assert!(PacketSpec { rrc_beta: 1.5, ..base }.validate().is_err());
    }

    #[test]
    fn iq_dump_layout() {
        let s = ComplexSignal::new(vec![c(1.0, -2.0)], 1e6);
        let mut buf = Vec::new();
        s.write_iq_f32(&mut buf).unwrap();
        assert_eq!(buf[..4], 1.0f32.to_le_bytes());
        assert_eq!(buf[4..], (-2.0f32).to_le_bytes());
    }
}
