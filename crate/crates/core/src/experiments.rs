//! The six studies as configurable sweeps over the full pipeline.
//!
//! Every study is a list of independent jobs (one trained network each).
//! Jobs draw all randomness from seeds derived from the master seed and a
//! textual job key, so results do not depend on scheduling.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;

use crate::channel::{ChannelConfig, ChannelKind};
use crate::config::{join, KvMap};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::features::{FeatureMode, Representation};
use crate::modelgen::{generate_models, GeneratorSpec};
use crate::nn::{with_input_scale, AdamConfig, ConvNetConfig, FcNetConfig, NetworkSpec};
use crate::rng::{derive_seed, label, SimRng};
use crate::saleh::SalehModel;
use crate::sigchain::{DataMode, Modulation, PacketSpec};
use crate::trainer::{evaluate, network_spec, train_best_of, Architecture, NoisePath, SampleFactory, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Study {
    Arch,
    Variability,
    Ntx,
    Snr,
    PktLen,
    Modulation,
}

impl Study {
    pub const ALL: [Study; 6] = [
        Study::Arch,
        Study::Variability,
        Study::Ntx,
        Study::Snr,
        Study::PktLen,
        Study::Modulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Arch => "arch",
            Study::Variability => "variability",
            Study::Ntx => "ntx",
            Study::Snr => "snr",
            Study::PktLen => "pktlen",
            Study::Modulation => "modulation",
        }
    }

    /// Name of the swept quantity in the results table.
    pub fn param(self) -> &'static str {
        match self {
            Study::Arch => "s",
            Study::Variability => "s",
            Study::Ntx => "n_tx",
            Study::Snr => "snr_db",
            Study::PktLen => "length_symbols",
            Study::Modulation => "modulation",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid(format!("unknown study `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Small populations, short training and trimmed grids for one CPU.
    Desk,
    /// Population sizes, training budget and grids of the original study.
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(invalid(format!("unknown preset `{other}`"))),
        }
    }
}

/// Keys with this prefix are bookkeeping and ignored by the parser.
pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub study: Study,
    pub seed: u64,
    pub n_tx: usize,
    pub snr_db: f64,
    pub modulation: Modulation,
    pub length_symbols: usize,
    pub channel: ChannelKind,
    pub data_mode: DataMode,
    /// Population generator; its `s` is the variability of studies that do
    /// not sweep it.
    pub generator: GeneratorSpec,
    pub representation: Representation,
    pub architecture: Architecture,
    pub normalize: bool,
    /// Curves: every data mode is combined with every channel kind.
    pub data_modes: Vec<DataMode>,
    pub channels: Vec<ChannelKind>,
    /// Swept values, as text; their meaning depends on the study.
    pub sweep: Vec<String>,
    /// Per-sample SNR choices (dB) for training in the SNR study.
    pub snr_train: Vec<f64>,
    pub eval_per_class: usize,
    pub noise_path: NoisePath,
    pub record_timing: bool,
    pub svg: bool,
    pub packet: PacketSpec,
    pub channel_params: ChannelConfig,
    pub train: TrainConfig,
    pub conv: ConvNetConfig,
    pub fc: FcNetConfig,
    /// Put a calibrated per-input scaling layer in front of the network.
    pub input_scale: bool,
}

fn range(lo: i64, hi: i64, step: i64) -> Vec<String> {
    (lo..=hi).step_by(step as usize).map(|v| v.to_string()).collect()
}

impl ExperimentConfig {
    pub fn preset(study: Study, preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let sweep: Vec<String> = match (study, paper) {
            (Study::Arch, _) => vec!["0.005".into(), "1".into()],
            (Study::Variability, true) => ["0.005", "0.01", "0.05", "0.1", "0.5", "1"].map(String::from).to_vec(),
            (Study::Variability, false) => ["0.01", "0.1", "1"].map(String::from).to_vec(),
            (Study::Ntx, true) => ["5", "10", "20", "50", "100", "200", "500"].map(String::from).to_vec(),
            (Study::Ntx, false) => ["5", "10", "20"].map(String::from).to_vec(),
            (Study::Snr, _) => range(0, 30, 5),
            (Study::PktLen, true) => ["256", "512", "1024", "2048", "4096", "8192"].map(String::from).to_vec(),
            (Study::PktLen, false) => ["512", "2048", "8192"].map(String::from).to_vec(),
            (Study::Modulation, _) => Modulation::ALL.iter().map(|m| m.name().to_string()).collect(),
        };
        let all_modes = vec![DataMode::Same, DataMode::Random];
        let all_channels = vec![ChannelKind::Awgn, ChannelKind::Dynamic];
        let (data_modes, channels) = match (study, paper) {
            (_, true) => (all_modes, all_channels),
            (Study::Ntx | Study::Modulation, false) => (all_modes, vec![ChannelKind::Awgn]),
            (Study::PktLen, false) => (vec![DataMode::Random], all_channels),
            _ => (all_modes, all_channels),
        };
        let train = if paper {
            TrainConfig::default()
        } else {
            TrainConfig {
                epoch_samples_per_class: 500,
                max_epochs: 12,
                patience: 3,
                restarts: 1,
                validation_samples_per_class: 50,
                ..TrainConfig::default()
            }
        };
        Self {
            study,
            seed: 1,
            n_tx: if paper { 20 } else { 5 },
            snr_db: 20.0,
            modulation: Modulation::Qpsk,
            length_symbols: 8192,
            channel: ChannelKind::Awgn,
            data_mode: DataMode::Random,
            generator: GeneratorSpec::default(),
            representation: Representation::Magnitude,
            architecture: Architecture::Conv,
            normalize: false,
            data_modes,
            channels,
            sweep,
            snr_train: (0..=30).map(f64::from).collect(),
            eval_per_class: if paper { 1000 } else { 300 },
            noise_path: NoisePath::Folded,
            record_timing: false,
            svg: true,
            packet: PacketSpec::default(),
            channel_params: ChannelConfig::default(),
            train,
            conv: ConvNetConfig::default(),
            fc: FcNetConfig::default(),
            input_scale: true,
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("study", self.study);
        m.set("seed", self.seed);
        m.set("n_tx", self.n_tx);
        m.set("snr_db", self.snr_db);
        m.set("modulation", self.modulation);
        m.set("length_symbols", self.length_symbols);
        m.set("channel", self.channel.label());
        m.set("data_mode", self.data_mode.label());
        self.generator.write_kv(&mut m, "generator.");
        m.set("representation", self.representation.name());
        m.set("architecture", self.architecture);
        m.set("normalize", self.normalize);
        m.set("data_modes", self.data_modes.iter().map(|d| d.label()).collect::<Vec<_>>().join(","));
        m.set("channels", self.channels.iter().map(|c| c.label()).collect::<Vec<_>>().join(","));
        m.set("sweep", self.sweep.join(","));
        m.set("snr_train", join(&self.snr_train));
        m.set("eval_per_class", self.eval_per_class);
        m.set("noise_path", self.noise_path.name());
        m.set("record_timing", self.record_timing);
        m.set("plots.svg", self.svg);
        m.set("packet.sps", self.packet.sps);
        m.set("packet.rrc_beta", self.packet.rrc_beta);
        m.set("packet.rrc_span", self.packet.rrc_span);
        m.set("packet.same_seed", self.packet.same_seed);
        m.set("packet.sample_rate", self.packet.sample_rate);
        m.set("channel.interp_factor", self.channel_params.interp_factor);
        m.set("channel.cfo_std_hz", self.channel_params.cfo_std_hz);
        m.set("channel.n_taps", self.channel_params.n_taps);
        m.set("channel.rayleigh_scale", self.channel_params.rayleigh_scale);
        let t = &self.train;
        m.set("train.batch_size", t.batch_size);
        m.set("train.epoch_samples_per_class", t.epoch_samples_per_class);
        m.set("train.max_epochs", t.max_epochs);
        m.set("train.patience", t.patience);
        m.set("train.restarts", t.restarts);
        m.set("train.validation_samples_per_class", t.validation_samples_per_class);
        m.set("train.min_delta", t.min_delta);
        m.set("train.adam.step_size", t.adam.step_size);
        m.set("train.adam.beta1", t.adam.beta1);
        m.set("train.adam.beta2", t.adam.beta2);
        m.set("train.adam.epsilon", t.adam.epsilon);
        m.set("net.conv_filters1", self.conv.filters1);
        m.set("net.conv_filters2", self.conv.filters2);
        m.set("net.fc_hidden", join(&self.fc.hidden));
        m.set("net.fc_wide_extra", self.fc.wide_extra);
        m.set("net.input_scale", self.input_scale);
        m
    }

    /// Reads a complete configuration. Every key is required; unknown keys
    /// are rejected except those under [`MANIFEST_PREFIX`].
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let study: Study = m.require("study")?;
        let known = Self::preset(study, Preset::Desk).to_kv();
        for k in m.keys() {
            if !known.contains(k) && !k.starts_with(MANIFEST_PREFIX) {
                return Err(invalid(format!("unknown configuration key `{k}`")));
            }
        }
        let packet = PacketSpec {
            length_symbols: m.require("length_symbols")?,
            modulation: m.require("modulation")?,
            sps: m.require("packet.sps")?,
            rrc_beta: m.require("packet.rrc_beta")?,
            rrc_span: m.require("packet.rrc_span")?,
            data_mode: m.require("data_mode")?,
            same_seed: m.require("packet.same_seed")?,
            sample_rate: m.require("packet.sample_rate")?,
        };
        let channel_params = ChannelConfig {
            kind: m.require("channel")?,
            snr_db: m.require("snr_db")?,
            interp_factor: m.require("channel.interp_factor")?,
            cfo_std_hz: m.require("channel.cfo_std_hz")?,
            n_taps: m.require("channel.n_taps")?,
            rayleigh_scale: m.require("channel.rayleigh_scale")?,
        };
        let train = TrainConfig {
            batch_size: m.require("train.batch_size")?,
            epoch_samples_per_class: m.require("train.epoch_samples_per_class")?,
            max_epochs: m.require("train.max_epochs")?,
            patience: m.require("train.patience")?,
            restarts: m.require("train.restarts")?,
            validation_samples_per_class: m.require("train.validation_samples_per_class")?,
            min_delta: m.require("train.min_delta")?,
            adam: AdamConfig {
                step_size: m.require("train.adam.step_size")?,
                beta1: m.require("train.adam.beta1")?,
                beta2: m.require("train.adam.beta2")?,
                epsilon: m.require("train.adam.epsilon")?,
            },
        };
        let cfg = Self {
            study,
            seed: m.require("seed")?,
            n_tx: m.require("n_tx")?,
            snr_db: channel_params.snr_db,
            modulation: packet.modulation,
            length_symbols: packet.length_symbols,
            channel: channel_params.kind,
            data_mode: packet.data_mode,
            generator: GeneratorSpec::from_kv(m, "generator.")?,
            representation: m.require("representation")?,
            architecture: m.require("architecture")?,
            normalize: m.require("normalize")?,
            data_modes: m.require_list("data_modes")?,
            channels: m.require_list("channels")?,
            sweep: m.require_list("sweep")?,
            snr_train: m.require_list("snr_train")?,
            eval_per_class: m.require("eval_per_class")?,
            noise_path: m.require("noise_path")?,
            record_timing: m.require("record_timing")?,
            svg: m.require("plots.svg")?,
            packet,
            channel_params,
            train,
            conv: ConvNetConfig {
                filters1: m.require("net.conv_filters1")?,
                filters2: m.require("net.conv_filters2")?,
            },
            fc: FcNetConfig {
                hidden: m.require_list("net.fc_hidden")?,
                wide_extra: m.require("net.fc_wide_extra")?,
            },
            input_scale: m.require("net.input_scale")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 2 {
            return Err(invalid("n_tx must be at least 2"));
        }
        if self.sweep.is_empty() {
            return Err(invalid("sweep must list at least one value"));
        }
        if self.data_modes.is_empty() || self.channels.is_empty() {
            return Err(invalid("data_modes and channels must be non-empty"));
        }
        if self.eval_per_class == 0 {
            return Err(invalid("eval_per_class must be positive"));
        }
        if self.snr_train.is_empty() {
            return Err(invalid("snr_train must be non-empty"));
        }
        self.generator.validate()?;
        self.train.validate()?;
        self.packet.validate()?;
        self.channel_params.validate()?;
        match self.study {
            Study::Arch | Study::Variability => {
                for s in self.sweep_f64()? {
                    if !(s >= 0.0) {
                        return Err(invalid(format!("variability {s} must be >= 0")));
                    }
                }
            }
            Study::Ntx => {
                for n in self.sweep_usize()? {
                    if n < 2 {
                        return Err(invalid(format!("n_tx sweep value {n} must be >= 2")));
                    }
                }
            }
            Study::Snr => {
                self.sweep_f64()?;
            }
            Study::PktLen => {
                self.sweep_usize()?;
            }
            Study::Modulation => {
                self.sweep_modulations()?;
            }
        }
        Ok(())
    }

    fn parse_sweep<T: FromStr>(&self) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        self.sweep
            .iter()
            .map(|s| s.parse::<T>().map_err(|e| invalid(format!("sweep value `{s}`: {e}"))))
            .collect()
    }

    pub fn sweep_f64(&self) -> Result<Vec<f64>> {
        self.parse_sweep()
    }

    pub fn sweep_usize(&self) -> Result<Vec<usize>> {
        self.parse_sweep()
    }

    pub fn sweep_modulations(&self) -> Result<Vec<Modulation>> {
        self.parse_sweep()
    }

    pub fn feature_mode(&self, representation: Representation) -> FeatureMode {
        FeatureMode { representation, normalize: self.normalize }
    }

    /// Number of test samples behind each accuracy of a run with `n_tx` classes.
    pub fn eval_count(&self, n_tx: usize) -> usize {
        self.eval_per_class * n_tx
    }

    fn curves(&self) -> Vec<(DataMode, ChannelKind)> {
        let mut out = Vec::new();
        for &d in &self.data_modes {
            for &c in &self.channels {
                out.push((d, c));
            }
        }
        out
    }
}

/// Keys that only matter to sweeps; single training runs leave them out.
pub const SWEEP_KEYS: [&str; 6] = ["study", "data_modes", "channels", "sweep", "snr_train", "plots.svg"];

impl ExperimentConfig {
    /// The operating point of a single run, without sweep keys.
    pub fn base_kv(&self) -> KvMap {
        let full = self.to_kv();
        let mut m = KvMap::new();
        for k in full.keys() {
            if !SWEEP_KEYS.contains(&k) {
                m.set(k, full.raw(k).unwrap_or_default());
            }
        }
        m
    }

    /// Reads a single-run configuration written by [`Self::base_kv`].
    pub fn from_base_kv(m: &KvMap) -> Result<Self> {
        for k in SWEEP_KEYS {
            if m.contains(k) {
                return Err(invalid(format!("key `{k}` only applies to sweeps")));
            }
        }
        let template = Self::preset(Study::Variability, Preset::Desk).to_kv();
        let mut full = KvMap::new();
        for k in SWEEP_KEYS {
            full.set(k, template.raw(k).unwrap_or_default());
        }
        full.merge(m);
        Self::from_kv(&full)
    }

    /// Population, factory and network layout of the base operating point.
    pub fn base_setup(&self) -> Result<(Vec<SalehModel>, SampleFactory, NetworkSpec)> {
        let s = self.generator.s;
        let models = population(self, s, self.n_tx, &format!("s={s}/n={}", self.n_tx))?;
        let setup = JobSetup {
            cfg: self,
            models: &models,
            data_mode: self.data_mode,
            channel: self.channel,
            length_symbols: self.length_symbols,
            representation: self.representation,
            architecture: self.architecture,
        };
        let factory = setup.factory()?;
        let spec = setup.spec()?;
        Ok((models, factory, spec))
    }
}

/// Result of one training run at the base operating point.
#[derive(Clone, Debug)]
pub struct SingleRun {
    pub models: Vec<SalehModel>,
    pub spec: NetworkSpec,
    pub best: crate::trainer::BestOf,
    pub test: crate::trainer::Evaluation,
    /// Master seed, run seed, seed of the winning restart.
    pub seed_lineage: Vec<u64>,
}

pub fn train_single(cfg: &ExperimentConfig, exec: Exec) -> Result<SingleRun> {
    cfg.validate()?;
    let (models, factory, spec) = cfg.base_setup()?;
    let seed = derive_seed(cfg.seed, label("train"));
    let best = train_best_of(&spec, &factory, &cfg.train, seed, exec)?;
    let test = evaluate(&best.best.network, &factory, cfg.eval_per_class, derive_seed(seed, label("test")), exec)?;
    let seed_lineage = vec![cfg.seed, seed, best.best.seed];
    Ok(SingleRun { models, spec, best, test, seed_lineage })
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub study: Study,
    pub param: String,
    pub value: String,
    pub data_mode: DataMode,
    pub channel: ChannelKind,
    pub n_tx: usize,
    /// Rounded to 4 decimals.
    pub accuracy: f64,
    pub chance: f64,
    pub epochs: usize,
    /// Wall time, only kept when timing is recorded.
    pub seconds: Option<f64>,
}

impl ResultRecord {
    /// Curve label: `sm/awgn`, `df/dy`, or the input/architecture pair in
    /// the architecture study.
    pub fn curve(&self) -> String {
        if self.study == Study::Arch {
            self.param.clone()
        } else {
            format!("{}/{}", self.data_mode.label(), self.channel.label())
        }
    }

    pub fn value_f64(&self) -> Option<f64> {
        self.value.parse().ok()
    }
}

pub const RESULTS_HEADER: &str = "study,param,value,data_mode,channel,n_tx,accuracy,chance,epochs,seconds";

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn write_results<W: Write>(mut w: W, records: &[ResultRecord]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in records {
        let seconds = r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{:.4},{},{},{}",
            r.study,
            r.param,
            r.value,
            r.data_mode.label(),
            r.channel.label(),
            r.n_tx,
            r.accuracy,
            r.chance,
            r.epochs,
            seconds
        )?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() || (i == 0 && line.trim() == RESULTS_HEADER) {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad {what} `{s}`"))) };
        let int = |s: &str, what: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("bad {what} `{s}`"))) };
        out.push(ResultRecord {
            study: f[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            param: f[1].to_string(),
            value: f[2].to_string(),
            data_mode: f[3].parse().map_err(|e: Error| bad(e.to_string()))?,
            channel: f[4].parse().map_err(|e: Error| bad(e.to_string()))?,
            n_tx: int(f[5], "n_tx")?,
            accuracy: num(f[6], "accuracy")?,
            chance: num(f[7], "chance")?,
            epochs: int(f[8], "epochs")?,
            seconds: if f[9].is_empty() { None } else { Some(num(f[9], "seconds")?) },
        });
    }
    Ok(out)
}

/// Standard error of an accuracy measured on `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Standard error of the difference of two independent accuracies.
pub fn diff_sigma(pa: f64, na: usize, pb: f64, nb: usize) -> f64 {
    (binomial_sigma(pa, na).powi(2) + binomial_sigma(pb, nb).powi(2)).sqrt()
}

/// Population of `n` transmitters for a given tag; the same tag under the
/// same master seed always yields the same models.
pub fn population(cfg: &ExperimentConfig, s: f64, n: usize, tag: &str) -> Result<Vec<SalehModel>> {
    let spec = cfg.generator.with_variability(s);
    let mut rng = SimRng::seed_from_u64(derive_seed(cfg.seed, label(&format!("population/{tag}"))));
    generate_models(&spec, n, &mut rng, Exec::Sequential)
}

struct JobSetup<'a> {
    cfg: &'a ExperimentConfig,
    models: &'a [SalehModel],
    data_mode: DataMode,
    channel: ChannelKind,
    length_symbols: usize,
    representation: Representation,
    architecture: Architecture,
}

impl JobSetup<'_> {
    fn factory(&self) -> Result<SampleFactory> {
        let cfg = self.cfg;
        let packet = PacketSpec {
            length_symbols: self.length_symbols,
            data_mode: self.data_mode,
            modulation: cfg.modulation,
            ..cfg.packet.clone()
        };
        let channel = ChannelConfig { kind: self.channel, snr_db: cfg.snr_db, ..cfg.channel_params };
        Ok(SampleFactory::new(self.models.to_vec(), packet, channel, cfg.feature_mode(self.representation))?
            .with_noise_path(cfg.noise_path))
    }

    fn spec(&self) -> Result<NetworkSpec> {
        let spec = network_spec(
            self.architecture,
            self.cfg.feature_mode(self.representation),
            self.models.len(),
            self.cfg.conv,
            &self.cfg.fc,
        )?;
        Ok(if self.cfg.input_scale { with_input_scale(spec) } else { spec })
    }
}

type Job<'a> = Box<dyn Fn(Exec) -> Result<Vec<ResultRecord>> + Send + Sync + 'a>;

struct Trained {
    network: crate::nn::Network<f32>,
    epochs: usize,
    seed: u64,
}

fn train_job(setup: &JobSetup<'_>, factory: &SampleFactory, key: &str, exec: Exec) -> Result<Trained> {
    let seed = derive_seed(setup.cfg.seed, label(key));
    let best = train_best_of(&setup.spec()?, factory, &setup.cfg.train, seed, exec)?;
    Ok(Trained { epochs: best.best.epochs(), network: best.best.network, seed })
}

#[allow(clippy::too_many_arguments)]
fn record(
    cfg: &ExperimentConfig,
    param: &str,
    value: String,
    data_mode: DataMode,
    channel: ChannelKind,
    n_tx: usize,
    accuracy: f64,
    epochs: usize,
    started: Instant,
) -> ResultRecord {
    ResultRecord {
        study: cfg.study,
        param: param.to_string(),
        value,
        data_mode,
        channel,
        n_tx,
        accuracy: round4(accuracy),
        chance: 1.0 / n_tx as f64,
        epochs,
        seconds: cfg.record_timing.then(|| (started.elapsed().as_secs_f64() * 1e3).round() / 1e3),
    }
}

/// Trains at the setup's operating point and scores one record.
fn simple_job<'a>(setup: JobSetup<'a>, param: String, value: String, key: String) -> Job<'a> {
    Box::new(move |exec| {
        let started = Instant::now();
        let factory = setup.factory()?;
        let t = train_job(&setup, &factory, &key, exec)?;
        let ev = evaluate(&t.network, &factory, setup.cfg.eval_per_class, derive_seed(t.seed, label("test")), exec)?;
        Ok(vec![record(
            setup.cfg,
            &param,
            value.clone(),
            setup.data_mode,
            setup.channel,
            setup.models.len(),
            ev.accuracy,
            t.epochs,
            started,
        )])
    })
}

/// One network trained on mixed SNRs, scored at every sweep SNR.
fn snr_job<'a>(setup: JobSetup<'a>, key: String) -> Job<'a> {
    Box::new(move |exec| {
        let started = Instant::now();
        let cfg = setup.cfg;
        let factory = setup.factory()?.with_snr_choices(cfg.snr_train.clone())?;
        let t = train_job(&setup, &factory, &key, exec)?;
        let mut out = Vec::new();
        for (v, snr) in cfg.sweep.iter().zip(cfg.sweep_f64()?) {
            let test = factory.clone().with_snr_db(snr)?;
            let seed = derive_seed(t.seed, label(&format!("test/snr={v}")));
            let ev = evaluate(&t.network, &test, cfg.eval_per_class, seed, exec)?;
            out.push(record(
                cfg,
                Study::Snr.param(),
                v.clone(),
                setup.data_mode,
                setup.channel,
                setup.models.len(),
                ev.accuracy,
                t.epochs,
                started,
            ));
        }
        Ok(out)
    })
}

/// One network trained on the modulation mixture, scored per modulation.
fn modulation_job<'a>(setup: JobSetup<'a>, key: String) -> Job<'a> {
    Box::new(move |exec| {
        let started = Instant::now();
        let cfg = setup.cfg;
        let mods = cfg.sweep_modulations()?;
        let factory = setup.factory()?.with_modulations(mods.clone())?;
        let t = train_job(&setup, &factory, &key, exec)?;
        let mut out = Vec::new();
        for m in mods {
            let test = factory.clone().with_modulations(vec![m])?;
            let seed = derive_seed(t.seed, label(&format!("test/modulation={m}")));
            let ev = evaluate(&t.network, &test, cfg.eval_per_class, seed, exec)?;
            out.push(record(
                cfg,
                Study::Modulation.param(),
                m.name().to_string(),
                setup.data_mode,
                setup.channel,
                setup.models.len(),
                ev.accuracy,
                t.epochs,
                started,
            ));
        }
        Ok(out)
    })
}

/// Transmitter populations of a study, keyed by sweep value where the
/// population depends on it. Curves within a study share them.
fn populations(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<SalehModel>)>> {
    let s0 = cfg.generator.s;
    let mut pops = Vec::new();
    match cfg.study {
        Study::Arch | Study::Variability => {
            for (v, s) in cfg.sweep.iter().zip(cfg.sweep_f64()?) {
                pops.push((v.clone(), population(cfg, s, cfg.n_tx, &format!("s={v}/n={}", cfg.n_tx))?));
            }
        }
        Study::Ntx => {
            for (v, n) in cfg.sweep.iter().zip(cfg.sweep_usize()?) {
                pops.push((v.clone(), population(cfg, s0, n, &format!("s={s0}/n={v}"))?));
            }
        }
        Study::Snr | Study::PktLen | Study::Modulation => {
            pops.push((String::new(), population(cfg, s0, cfg.n_tx, &format!("s={s0}/n={}", cfg.n_tx))?));
        }
    }
    Ok(pops)
}

fn jobs<'a>(cfg: &'a ExperimentConfig, pops: &'a [(String, Vec<SalehModel>)]) -> Result<Vec<Job<'a>>> {
    let setup = |models: &'a [SalehModel], data_mode, channel| JobSetup {
        cfg,
        models,
        data_mode,
        channel,
        length_symbols: cfg.length_symbols,
        representation: cfg.representation,
        architecture: cfg.architecture,
    };
    let mut jobs: Vec<Job<'a>> = Vec::new();
    match cfg.study {
        Study::Arch => {
            for (v, models) in pops {
                for rep in Representation::ALL {
                    for arch in Architecture::ALL {
                        let combo = format!("{}-{arch}", rep.name());
                        let s = JobSetup { representation: rep, architecture: arch, ..setup(models, cfg.data_mode, cfg.channel) };
                        jobs.push(simple_job(s, combo.clone(), v.clone(), format!("arch/s={v}/{combo}")));
                    }
                }
            }
        }
        Study::Variability | Study::Ntx => {
            for (v, models) in pops {
                for (dm, ch) in cfg.curves() {
                    let key = format!("{}/{v}/{}/{}", cfg.study, dm.label(), ch.label());
                    jobs.push(simple_job(setup(models, dm, ch), cfg.study.param().into(), v.clone(), key));
                }
            }
        }
        Study::PktLen => {
            let models = &pops[0].1;
            for (v, len) in cfg.sweep.iter().zip(cfg.sweep_usize()?) {
                for (dm, ch) in cfg.curves() {
                    let key = format!("pktlen/{v}/{}/{}", dm.label(), ch.label());
                    let s = JobSetup { length_symbols: len, ..setup(models, dm, ch) };
                    jobs.push(simple_job(s, Study::PktLen.param().into(), v.clone(), key));
                }
            }
        }
        Study::Snr => {
            for (dm, ch) in cfg.curves() {
                let key = format!("snr/{}/{}", dm.label(), ch.label());
                jobs.push(snr_job(setup(&pops[0].1, dm, ch), key));
            }
        }
        Study::Modulation => {
            for (dm, ch) in cfg.curves() {
                let key = format!("modulation/{}/{}", dm.label(), ch.label());
                jobs.push(modulation_job(setup(&pops[0].1, dm, ch), key));
            }
        }
    }
    Ok(jobs)
}

/// Runs every job of the configured study. Returns the records of the jobs
/// that succeeded, in sweep order, and the first error if any job failed.
/// `progress` is called as jobs finish (in completion order).
pub fn run_study_partial(
    cfg: &ExperimentConfig,
    exec: Exec,
    progress: &(dyn Fn(&[ResultRecord]) + Sync),
) -> (Vec<ResultRecord>, Option<Error>) {
    if let Err(e) = cfg.validate() {
        return (Vec::new(), Some(e));
    }
    let pops = match populations(cfg) {
        Ok(p) => p,
        Err(e) => return (Vec::new(), Some(e)),
    };
    let jobs = match jobs(cfg, &pops) {
        Ok(j) => j,
        Err(e) => return (Vec::new(), Some(e)),
    };
    let results = exec.map(jobs.len(), |i| {
        let r = jobs[i](exec);
        if let Ok(recs) = &r {
            progress(recs);
        }
        r
    });
    let mut records = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => records.extend(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    (records, first_err)
}

pub fn run_study(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    match run_study_partial(cfg, exec, &|_| {}) {
        (records, None) => Ok(records),
        (_, Some(e)) => Err(e),
    }
}

/// All six representation/architecture combinations at every swept `s`.
pub fn run_arch_comparison(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::Arch)?;
    run_study(cfg, exec)
}

pub fn run_variability_sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::Variability)?;
    run_study(cfg, exec)
}

pub fn run_ntx_sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::Ntx)?;
    run_study(cfg, exec)
}

pub fn run_snr_sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::Snr)?;
    run_study(cfg, exec)
}

pub fn run_packet_length_sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::PktLen)?;
    run_study(cfg, exec)
}

pub fn run_modulation_sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<ResultRecord>> {
    require_study(cfg, Study::Modulation)?;
    run_study(cfg, exec)
}

fn require_study(cfg: &ExperimentConfig, study: Study) -> Result<()> {
    if cfg.study != study {
        return Err(invalid(format!("configuration is for study `{}`, not `{study}`", cfg.study)));
    }
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(study: Study) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(study, Preset::Desk);
        cfg.n_tx = 2;
        cfg.length_symbols = 256;
        cfg.eval_per_class = 10;
        cfg.train = TrainConfig {
            batch_size: 8,
            epoch_samples_per_class: 8,
            max_epochs: 1,
            patience: 1,
            restarts: 1,
            validation_samples_per_class: 4,
            ..TrainConfig::default()
        };
        cfg.conv = ConvNetConfig { filters1: 2, filters2: 2 };
        cfg.fc = FcNetConfig { hidden: vec![4], wide_extra: 4 };
        cfg
    }

    #[test]
    fn presets_round_trip_through_text() {
        for study in Study::ALL {
            for preset in [Preset::Desk, Preset::Paper] {
                let cfg = ExperimentConfig::preset(study, preset);
                let text = cfg.to_kv().to_text();
                let back = ExperimentConfig::from_kv(&KvMap::parse(&text).unwrap()).unwrap();
                assert_eq!(back, cfg, "{study} {preset:?}");
            }
        }
    }

    #[test]
    fn desk_grids_are_trimmed() {
        let ntx = ExperimentConfig::preset(Study::Ntx, Preset::Desk);
        assert!(ntx.sweep.len() <= 4);
        assert!(ntx.sweep_usize().unwrap().iter().all(|&n| n <= 50));
        let paper = ExperimentConfig::preset(Study::Ntx, Preset::Paper);
        assert_eq!(paper.sweep_usize().unwrap(), vec![5, 10, 20, 50, 100, 200, 500]);
        assert_eq!(paper.n_tx, 20);
        assert_eq!(paper.train, TrainConfig::default());
    }

    #[test]
    fn missing_and_unknown_keys() {
        let mut m = ExperimentConfig::preset(Study::Snr, Preset::Desk).to_kv();
        m.set("manifest.version", "x");
        assert!(ExperimentConfig::from_kv(&m).is_ok());
        m.set("bogus", 1);
        assert!(ExperimentConfig::from_kv(&m).is_err());
        let text: String = ExperimentConfig::preset(Study::Snr, Preset::Desk)
            .to_kv()
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("train.patience"))
            .map(|l| format!("{l}\n"))
            .collect();
        match ExperimentConfig::from_kv(&KvMap::parse(&text).unwrap()) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "train.patience"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn results_csv_round_trip() {
        let recs = vec![
            ResultRecord {
                study: Study::Ntx,
                param: "n_tx".into(),
                value: "5".into(),
                data_mode: DataMode::Same,
                channel: ChannelKind::Awgn,
                n_tx: 5,
                accuracy: round4(0.912345),
                chance: 0.2,
                epochs: 7,
                seconds: None,
            },
            ResultRecord {
                study: Study::Modulation,
                param: "modulation".into(),
                value: "QAM16".into(),
                data_mode: DataMode::Random,
                channel: ChannelKind::Dynamic,
                n_tx: 3,
                accuracy: 0.5,
                chance: 1.0 / 3.0,
                epochs: 25,
                seconds: Some(1.25),
            },
        ];
        let mut buf = Vec::new();
        write_results(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("study,param,value,data_mode,channel,n_tx,accuracy,chance,epochs,seconds\n"));
        assert!(text.contains(",0.9123,0.2,7,\n"));
        assert!(text.contains(",0.5000,"));
        assert_eq!(read_results(buf.as_slice()).unwrap(), recs);
        assert!(matches!(read_results("ntx,n_tx,5\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn record_counts_per_study() {
        let arch = tiny(Study::Arch);
        let recs = run_arch_comparison(&arch, Exec::Parallel).unwrap();
        assert_eq!(recs.len(), 12);

        let mut snr = tiny(Study::Snr);
        snr.data_modes = vec![DataMode::Same];
        snr.channels = vec![ChannelKind::Awgn];
        let recs = run_snr_sweep(&snr, Exec::Parallel).unwrap();
        assert_eq!(recs.len(), 7);

        let mut m = tiny(Study::Modulation);
        m.channels = vec![ChannelKind::Awgn];
        let recs = run_modulation_sweep(&m, Exec::Parallel).unwrap();
        assert_eq!(recs.len(), 5 * 2);
        for r in &recs {
            assert!((0.0..=1.0).contains(&r.accuracy));
            assert_eq!(r.chance, 0.5);
        }
        assert!(run_ntx_sweep(&m, Exec::Parallel).is_err());
    }

    #[test]
    fn ntx_chance_column() {
        let mut cfg = tiny(Study::Ntx);
        cfg.sweep = vec!["2".into(), "4".into()];
        cfg.data_modes = vec![DataMode::Same];
        let recs = run_ntx_sweep(&cfg, Exec::Sequential).unwrap();
        let chance: Vec<f64> = recs.iter().map(|r| r.chance).collect();
        assert_eq!(chance, vec![0.5, 0.25]);
    }

    #[test]
    fn short_packets_fail() {
        let mut cfg = tiny(Study::PktLen);
        cfg.sweep = vec!["64".into()];
        let (recs, err) = run_study_partial(&cfg, Exec::Sequential, &|_| {});
        assert!(recs.is_empty());
        assert!(matches!(err, Some(Error::TooShort { .. })) || matches!(err, Some(Error::InvalidParameter(_))), "{err:?}");
    }

    #[test]
    fn reruns_are_identical_under_any_exec() {
        let mut cfg = tiny(Study::Variability);
        cfg.sweep = vec!["0.5".into()];
        let a = run_study(&cfg, Exec::Sequential).unwrap();
        let b = run_study(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn base_config_round_trip() {
        let cfg = ExperimentConfig::preset(Study::Variability, Preset::Desk);
        let base = cfg.base_kv();
        assert!(!base.contains("sweep"));
        assert_eq!(ExperimentConfig::from_base_kv(&base).unwrap(), cfg);
        assert!(ExperimentConfig::from_base_kv(&cfg.to_kv()).is_err());
    }

    #[test]
    fn single_run_produces_a_network() {
        let cfg = tiny(Study::Variability);
        let run = train_single(&cfg, Exec::Parallel).unwrap();
        assert_eq!(run.models.len(), 2);
        assert_eq!(run.test.n_per_class, 10);
        assert_eq!(run.seed_lineage.len(), 3);
        assert_eq!(run.seed_lineage[0], cfg.seed);
    }

    #[test]
    fn sigma_helpers() {
        assert!((binomial_sigma(0.5, 100) - 0.05).abs() < 1e-15);
        assert!((diff_sigma(0.5, 100, 0.5, 100) - 0.05 * 2f64.sqrt()).abs() < 1e-15);
    }
}
