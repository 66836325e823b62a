//! Transmitter population statistics and synthetic population generation.
//!
//! Alpha is drawn from a gamma distribution with the population mean and a
//! standard deviation scaled by the variability coefficient `s`, truncated
//! to `[alpha_min, alpha_max]` by rejection. Beta follows from the fitted
//! beta-on-alpha regression line.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::config::KvMap;
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::rng::substream;
use crate::saleh::{ols, SalehModel};

const MAX_REJECTIONS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub mu: f64,
    pub sigma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Coefficient of transmitter variability.
    pub s: f64,
}

impl Default for GeneratorSpec {
    /// Calibration defaults: the reference model (2.1587, 1.1517) lies on
    /// the regression line through the origin.
    fn default() -> Self {
        Self {
            mu: 2.0,
            sigma: 0.3,
            slope: SalehModel::REFERENCE.beta / SalehModel::REFERENCE.alpha,
            intercept: 0.0,
            alpha_min: 1.0,
            alpha_max: 3.0,
            s: 1.0,
        }
    }
}

const SPEC_KEYS: [&str; 7] = ["mu", "sigma", "slope", "intercept", "alpha_min", "alpha_max", "s"];

impl GeneratorSpec {
    pub fn with_variability(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min < self.alpha_max) {
            return Err(invalid("alpha_min must be below alpha_max"));
        }
        if !(self.mu > self.alpha_min && self.mu < self.alpha_max) {
            return Err(invalid(format!(
                "mu {} outside ({}, {})",
                self.mu, self.alpha_min, self.alpha_max
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(invalid("variability s must be >= 0"));
        }
        if !self.slope.is_finite() || !self.intercept.is_finite() {
            return Err(invalid("regression line must be finite"));
        }
        Ok(())
    }

    /// Standard deviation actually used for sampling, `s * sigma`.
    pub fn scaled_sigma(&self) -> f64 {
        self.s * self.sigma
    }

    pub fn beta_for(&self, alpha: f64) -> f64 {
        (self.slope * alpha + self.intercept).max(0.0)
    }

    /// Reads the spec from `map`, with every key under `prefix`
    /// (e.g. `"gen."`, or `""` for a standalone spec file).
    pub fn from_kv(map: &KvMap, prefix: &str) -> Result<Self> {
        let get = |k: &str| map.require::<f64>(&format!("{prefix}{k}"));
        let spec = Self {
            mu: get("mu")?,
            sigma: get("sigma")?,
            slope: get("slope")?,
            intercept: get("intercept")?,
            alpha_min: get("alpha_min")?,
            alpha_max: get("alpha_max")?,
            s: get("s")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn write_kv(&self, map: &mut KvMap, prefix: &str) {
        let vals = [
            self.mu,
            self.sigma,
            self.slope,
            self.intercept,
            self.alpha_min,
            self.alpha_max,
            self.s,
        ];
        for (k, v) in SPEC_KEYS.iter().zip(vals) {
            map.set(&format!("{prefix}{k}"), v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut m = KvMap::new();
        self.write_kv(&mut m, "");
        m.to_text()
    }

    /// Parses a standalone spec file. Informational keys written by
    /// `population` (`n_samples`, `r_squared`) are accepted and ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let map = KvMap::parse(text)?;
        for k in map.keys() {
            if !SPEC_KEYS.contains(&k) && k != "n_samples" && k != "r_squared" {
                return Err(invalid(format!("unknown generator key `{k}`")));
            }
        }
        Self::from_kv(&map, "")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopulationStats {
    pub mu: f64,
    pub sigma: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n_samples: usize,
    pub r_squared: f64,
}

impl PopulationStats {
    /// Generator spec with these statistics, default truncation and `s = 1`.
    pub fn to_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            mu: self.mu,
            sigma: self.sigma,
            slope: self.slope,
            intercept: self.intercept,
            ..GeneratorSpec::default()
        }
    }

    /// Spec file text plus the informational `n_samples` and `r_squared`.
    pub fn to_text(&self) -> String {
        let mut m = KvMap::new();
        self.to_spec().write_kv(&mut m, "");
        m.set("n_samples", self.n_samples);
        m.set("r_squared", self.r_squared);
        m.to_text()
    }
}

pub fn fit_population(models: &[SalehModel]) -> Result<PopulationStats> {
    if models.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 models, got {}",
            models.len()
        )));
    }
    let alphas: Vec<f64> = models.iter().map(|m| m.alpha).collect();
    let betas: Vec<f64> = models.iter().map(|m| m.beta).collect();
    if alphas.iter().all(|&a| a == alphas[0]) {
        return Err(Error::DegenerateFit("all alpha values are equal".into()));
    }
    let n = alphas.len() as f64;
    let mu = alphas.iter().sum::<f64>() / n;
    let sigma = (alphas.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (slope, intercept) = ols(&alphas, &betas);

    let mean_b = betas.iter().sum::<f64>() / n;
    let ss_tot: f64 = betas.iter().map(|b| (b - mean_b).powi(2)).sum();
    let ss_res: f64 = alphas
        .iter()
        .zip(&betas)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(PopulationStats {
        mu,
        sigma,
        slope,
        intercept,
        n_samples: models.len(),
        r_squared,
    })
}

pub fn sample_alpha<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    if spec.s == 0.0 {
        return Ok(spec.mu);
    }
    let sd = spec.scaled_sigma();
    let shape = (spec.mu / sd).powi(2);
    let scale = sd * sd / spec.mu;
    let gamma = Gamma::new(shape, scale).map_err(|e| invalid(format!("gamma({shape}, {scale}): {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let a = gamma.sample(rng);
        if a >= spec.alpha_min && a <= spec.alpha_max {
            return Ok(a);
        }
    }
    Err(Error::RejectionOverflow(MAX_REJECTIONS))
}

/// `n` models; model `i` draws from its own substream of a base seed taken
/// from `rng`, so the list is the same under any execution mode.
pub fn generate_models<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    n: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<Vec<SalehModel>> {
    spec.validate()?;
    let base: u64 = rng.random();
    exec.try_map(n, |i| {
        let alpha = sample_alpha(spec, &mut substream(base, i as u64))?;
        SalehModel::new(alpha, spec.beta_for(alpha))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn sd(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn two_point_population() {
        let models = [SalehModel::new(1.0, 0.5).unwrap(), SalehModel::new(3.0, 1.5).unwrap()];
        let st = fit_population(&models).unwrap();
        assert!((st.mu - 2.0).abs() < 1e-15);
        assert!((st.sigma - 2f64.sqrt()).abs() < 1e-15);
        assert!((st.slope - 0.5).abs() < 1e-15);
        assert!(st.intercept.abs() < 1e-15);
        assert_eq!(st.n_samples, 2);
    }

    #[test]
    fn collinear_population() {
        let models: Vec<SalehModel> = (0..101)
            .map(|i| {
                let a = 1.0 + 2.0 * i as f64 / 100.0;
                SalehModel::new(a, 0.5 * a).unwrap()
            })
            .collect();
        let st = fit_population(&models).unwrap();
        assert!(st.intercept.abs() < 1e-12);
        assert!((st.slope - 0.5).abs() < 1e-12);
        assert!((st.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_population_is_degenerate() {
        let models = vec![SalehModel::REFERENCE; 5];
        assert!(matches!(fit_population(&models), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_population(&models[..1]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn zero_variability_is_deterministic() {
        let spec = GeneratorSpec::default().with_variability(0.0);
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_alpha(&spec, &mut rng).unwrap(), 2.0);
        }
        let models = generate_models(&spec, 100, &mut rng, Exec::Parallel).unwrap();
        assert_eq!(models.len(), 100);
        assert!(models.iter().all(|m| *m == models[0]));
        assert!(generate_models(&spec, 0, &mut rng, Exec::Parallel).unwrap().is_empty());
    }

    #[test]
    fn draws_respect_truncation() {
        let spec = GeneratorSpec {
            sigma: 0.8,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(2);
        for _ in 0..20_000 {
            let a = sample_alpha(&spec, &mut rng).unwrap();
            assert!((1.0..=3.0).contains(&a));
        }
    }

    #[test]
    fn misconfigured_window_overflows() {
        // shape (1.01/100)^2 puts nearly all mass at ~0, far below the window
        let spec = GeneratorSpec {
            mu: 1.01,
            sigma: 100.0,
            alpha_min: 1.0,
            alpha_max: 1.02,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(3);
        assert!(matches!(sample_alpha(&spec, &mut rng), Err(Error::RejectionOverflow(10_000))));
        assert!(generate_models(&spec, 3, &mut rng, Exec::Sequential).is_err());
    }

    #[test]
    fn collinear_generation_and_clamping() {
        let spec = GeneratorSpec::default();
        let mut rng = SimRng::seed_from_u64(5);
        for m in generate_models(&spec, 500, &mut rng, Exec::Sequential).unwrap() {
            assert_eq!(m.beta, spec.slope * m.alpha + spec.intercept);
        }
        let dipping = GeneratorSpec {
            slope: 1.0,
            intercept: -2.5,
            ..Default::default()
        };
        for m in generate_models(&dipping, 200, &mut rng, Exec::Sequential).unwrap() {
            assert_eq!(m.beta, (m.alpha - 2.5).max(0.0));
        }
    }

    #[test]
    fn generation_is_deterministic_across_modes() {
        let spec = GeneratorSpec::default().with_variability(0.1);
        let a = generate_models(&spec, 300, &mut SimRng::seed_from_u64(9), Exec::Parallel).unwrap();
        let b = generate_models(&spec, 300, &mut SimRng::seed_from_u64(9), Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spread_grows_with_variability() {
        let mut prev = 0.0;
        for s in [0.01, 0.1, 1.0] {
            let spec = GeneratorSpec::default().with_variability(s);
            let models = generate_models(&spec, 10_000, &mut SimRng::seed_from_u64(11), Exec::Parallel).unwrap();
            let alphas: Vec<f64> = models.iter().map(|m| m.alpha).collect();
            let spread = sd(&alphas);
            assert!(spread > prev, "s={s}: {spread} <= {prev}");
            prev = spread;
        }
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = GeneratorSpec::default().with_variability(0.05);
        assert_eq!(GeneratorSpec::parse(&spec.to_text()).unwrap(), spec);
        match GeneratorSpec::parse("mu=2\nsigma=0.3\n") {
            Err(Error::MissingKey(k)) => assert_eq!(k, "slope"),
            other => panic!("{other:?}"),
        }
        assert!(GeneratorSpec::parse(&format!("{}bogus=1\n", spec.to_text())).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let d = GeneratorSpec::default();
        assert!(GeneratorSpec { mu: 3.5, ..d }.validate().is_err());
        assert!(GeneratorSpec { sigma: 0.0, ..d }.validate().is_err());
        assert!(GeneratorSpec { s: -1.0, ..d }.validate().is_err());
        assert!(GeneratorSpec { alpha_min: 3.0, alpha_max: 1.0, ..d }.validate().is_err());
    }
}
