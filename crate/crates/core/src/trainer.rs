//! Online sample generation, the training loop, restarts and evaluation.

use std::collections::VecDeque;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::channel::{awgn, complex_gaussian, noise_variance, ChannelConfig, ChannelDraws, ChannelKind};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::features::{averaged_fft, fold_windows, represent, spectrum_of_fold, FeatureMode, FeatureVector, WINDOW};
use crate::nn::{
    build_conv_net, build_fc_net, init_params, AdamConfig, AdamState, ConvNetConfig, FcNetConfig, LayerSpec, Network,
    NetworkSpec, Tensor,
};
use crate::rng::{derive_seed, label, substream, SimRng};
use crate::saleh::SalehModel;
use crate::sigchain::{make_packet_with, ComplexSignal, DataMode, Modulation, PacketSpec};

/// Where additive noise enters the feature computation.
///
/// `Folded` adds the noise after the windows have been summed: the sum of
/// `K` independent circular Gaussian windows is itself circular Gaussian with
/// `K` times the variance, so the features have exactly the same
/// distribution as with `PerSample`, at a fraction of the cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoisePath {
    #[default]
    Folded,
    PerSample,
}

impl FromStr for NoisePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "folded" => Ok(NoisePath::Folded),
            "per_sample" | "per-sample" | "persample" => Ok(NoisePath::PerSample),
            other => Err(invalid(format!("unknown noise path `{other}`"))),
        }
    }
}

impl NoisePath {
    pub fn name(self) -> &'static str {
        match self {
            NoisePath::Folded => "folded",
            NoisePath::PerSample => "per_sample",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Architecture {
    #[default]
    Conv,
    Fc,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::Fc, Architecture::Conv];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Conv => "conv",
            Architecture::Fc => "fc",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" | "cnn" => Ok(Architecture::Conv),
            "fc" | "dense" => Ok(Architecture::Fc),
            other => Err(invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Network layout for features of the given mode.
pub fn network_spec(
    arch: Architecture,
    mode: FeatureMode,
    n_classes: usize,
    conv: ConvNetConfig,
    fc: &FcNetConfig,
) -> Result<NetworkSpec> {
    let cols = mode.representation.columns();
    match arch {
        Architecture::Conv => build_conv_net(WINDOW, cols, n_classes, conv),
        Architecture::Fc => build_fc_net(WINDOW * cols, n_classes, fc),
    }
}

/// PA output of one transmitter for the fixed SAME-mode packet.
struct PaCache {
    /// Kept only when a channel stage still has to see the waveform.
    signal: Option<ComplexSignal>,
    power: f64,
    folded: Vec<Complex64>,
    count: usize,
}

type CacheCells = Arc<Vec<OnceLock<Arc<PaCache>>>>;

/// Produces labelled feature vectors on demand. Class `i` is transmitter `i`.
#[derive(Clone)]
pub struct SampleFactory {
    transmitters: Vec<SalehModel>,
    packet: PacketSpec,
    channel: ChannelConfig,
    features: FeatureMode,
    modulations: Vec<Modulation>,
    snr_choices: Option<Vec<f64>>,
    noise_path: NoisePath,
    cache: CacheCells,
}

impl std::fmt::Debug for SampleFactory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampleFactory")
            .field("transmitters", &self.transmitters)
            .field("packet", &self.packet)
            .field("channel", &self.channel)
            .field("features", &self.features)
            .field("modulations", &self.modulations)
            .field("snr_choices", &self.snr_choices)
            .field("noise_path", &self.noise_path)
            .finish()
    }
}

impl SampleFactory {
    pub fn new(
        transmitters: Vec<SalehModel>,
        packet: PacketSpec,
        channel: ChannelConfig,
        features: FeatureMode,
    ) -> Result<Self> {
        if transmitters.len() < 2 {
            return Err(invalid(format!("need at least 2 transmitters, got {}", transmitters.len())));
        }
        packet.validate()?;
        channel.validate()?;
        if packet.samples_per_packet() < WINDOW {
            return Err(Error::TooShort { len: packet.samples_per_packet(), needed: WINDOW });
        }
        let modulations = vec![packet.modulation];
        let mut f = Self {
            transmitters,
            packet,
            channel,
            features,
            modulations,
            snr_choices: None,
            noise_path: NoisePath::default(),
            cache: Arc::new(Vec::new()),
        };
        f.reset_cache();
        Ok(f)
    }

    fn reset_cache(&mut self) {
        let n = Modulation::ALL.len() * self.transmitters.len();
        self.cache = Arc::new((0..n).map(|_| OnceLock::new()).collect());
    }

    /// Per-sample modulation drawn uniformly from `mods`.
    pub fn with_modulations(mut self, mods: Vec<Modulation>) -> Result<Self> {
        if mods.is_empty() {
            return Err(invalid("modulation set is empty"));
        }
        self.modulations = mods;
        Ok(self)
    }

    /// Per-sample SNR drawn uniformly from `choices` (dB).
    pub fn with_snr_choices(mut self, choices: Vec<f64>) -> Result<Self> {
        if choices.is_empty() || choices.iter().any(|s| s.is_nan()) {
            return Err(invalid("SNR choices must be a non-empty list of numbers"));
        }
        self.snr_choices = Some(choices);
        Ok(self)
    }

    /// Fixed SNR for every sample; clears any per-sample choices.
    pub fn with_snr_db(mut self, snr_db: f64) -> Result<Self> {
        self.channel.snr_db = snr_db;
        self.channel.validate()?;
        self.snr_choices = None;
        Ok(self)
    }

    pub fn with_noise_path(mut self, path: NoisePath) -> Self {
        self.noise_path = path;
        self
    }

    pub fn with_features(mut self, features: FeatureMode) -> Self {
        self.features = features;
        self
    }

    pub fn with_channel(mut self, channel: ChannelConfig) -> Result<Self> {
        channel.validate()?;
        let kind_changed = channel.kind != self.channel.kind;
        self.channel = channel;
        self.snr_choices = None;
        if kind_changed {
            self.reset_cache();
        }
        Ok(self)
    }

    pub fn with_data_mode(mut self, mode: DataMode) -> Self {
        if mode != self.packet.data_mode {
            self.packet.data_mode = mode;
            self.reset_cache();
        }
        self
    }

    pub fn n_classes(&self) -> usize {
        self.transmitters.len()
    }

    pub fn transmitters(&self) -> &[SalehModel] {
        &self.transmitters
    }

    pub fn packet(&self) -> &PacketSpec {
        &self.packet
    }

    pub fn channel(&self) -> &ChannelConfig {
        &self.channel
    }

    pub fn features(&self) -> FeatureMode {
        self.features
    }

    pub fn modulations(&self) -> &[Modulation] {
        &self.modulations
    }

    pub fn noise_path(&self) -> NoisePath {
        self.noise_path
    }

    fn same_pa(&self, modulation: Modulation, class: usize) -> Result<Arc<PaCache>> {
        let m = Modulation::ALL.iter().position(|&x| x == modulation).unwrap_or(0);
        let cell = &self.cache[m * self.transmitters.len() + class];
        if let Some(c) = cell.get() {
            return Ok(c.clone());
        }
        // SAME mode draws nothing from the generator
        let mut unused = SimRng::seed_from_u64(0);
        let packet = make_packet_with(&self.packet, modulation, &mut unused)?;
        let out = self.transmitters[class].apply_pa(&packet);
        let (folded, count) = fold_windows(&out.samples, WINDOW)?;
        let entry = PaCache {
            power: out.mean_power(),
            signal: (self.channel.kind == ChannelKind::Dynamic).then_some(out),
            folded,
            count,
        };
        Ok(cell.get_or_init(|| Arc::new(entry)).clone())
    }

    /// Averaged spectrum of one sample; every random draw comes from `seed`.
    pub fn sample_spectrum(&self, class: usize, seed: u64) -> Result<Vec<Complex64>> {
        if class >= self.transmitters.len() {
            return Err(Error::IndexOutOfRange { index: class, size: self.transmitters.len() });
        }
        let mut rng = SimRng::seed_from_u64(seed);
        let modulation = if self.modulations.len() == 1 {
            self.modulations[0]
        } else {
            self.modulations[rng.random_range(0..self.modulations.len())]
        };
        let snr_db = match &self.snr_choices {
            Some(c) => c[rng.random_range(0..c.len())],
            None => self.channel.snr_db,
        };

        // Fast path: fixed packet, no channel state, folded noise.
        if self.packet.data_mode == DataMode::Same
            && self.channel.kind == ChannelKind::Awgn
            && self.noise_path == NoisePath::Folded
        {
            let pa = self.same_pa(modulation, class)?;
            let folded = add_folded_noise(pa.folded.clone(), pa.count, pa.power, snr_db, &mut rng)?;
            return Ok(spectrum_of_fold(folded, pa.count));
        }

        let owned;
        let pa_out: &ComplexSignal = match self.packet.data_mode {
            DataMode::Same => {
                let pa = self.same_pa(modulation, class)?;
                owned = match &pa.signal {
                    Some(s) => s.clone(),
                    None => {
                        let mut unused = SimRng::seed_from_u64(0);
                        self.transmitters[class].apply_pa(&make_packet_with(&self.packet, modulation, &mut unused)?)
                    }
                };
                &owned
            }
            DataMode::Random => {
                let packet = make_packet_with(&self.packet, modulation, &mut rng)?;
                owned = self.transmitters[class].apply_pa(&packet);
                &owned
            }
        };
        let impaired = match self.channel.kind {
            ChannelKind::Awgn => None,
            ChannelKind::Dynamic => Some(ChannelDraws::sample(&self.channel, &mut rng).apply(&self.channel, pa_out)),
        };
        let signal = impaired.as_ref().unwrap_or(pa_out);
        match self.noise_path {
            NoisePath::PerSample => averaged_fft(&awgn(signal, snr_db, &mut rng)?, WINDOW),
            NoisePath::Folded => {
                let (folded, count) = fold_windows(&signal.samples, WINDOW)?;
                let folded = add_folded_noise(folded, count, signal.mean_power(), snr_db, &mut rng)?;
                Ok(spectrum_of_fold(folded, count))
            }
        }
    }

    pub fn sample(&self, class: usize, seed: u64) -> Result<FeatureVector> {
        Ok(represent(&self.sample_spectrum(class, seed)?, self.features))
    }

    /// Network input (row-major `f32`) for one sample.
    pub fn sample_input(&self, class: usize, seed: u64) -> Result<Vec<f32>> {
        Ok(self.sample(class, seed)?.to_input())
    }
}

fn add_folded_noise<R: Rng + ?Sized>(
    mut folded: Vec<Complex64>,
    count: usize,
    power: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if snr_db == f64::INFINITY {
        return Ok(folded);
    }
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let var = noise_variance(power, snr_db) * count as f64;
    for v in folded.iter_mut() {
        *v += complex_gaussian(rng, var);
    }
    Ok(folded)
}

/// An endless, class-balanced stream of fresh samples.
///
/// Labels come in shuffled blocks holding every class once, so any run of
/// `k * N` samples starting on a block boundary has exactly `k` per class.
pub struct SampleStream<'a> {
    factory: &'a SampleFactory,
    sample_parent: u64,
    label_parent: u64,
    input_shape: Vec<usize>,
    position: u64,
    blocks: u64,
    pending: VecDeque<usize>,
    exec: Exec,
}

impl<'a> SampleStream<'a> {
    pub fn new(factory: &'a SampleFactory, seed: u64, input_shape: &[usize], exec: Exec) -> Self {
        Self {
            factory,
            sample_parent: derive_seed(seed, label("samples")),
            label_parent: derive_seed(seed, label("labels")),
            input_shape: input_shape.to_vec(),
            position: 0,
            blocks: 0,
            pending: VecDeque::new(),
            exec,
        }
    }

    /// Number of samples handed out so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    fn next_label(&mut self) -> usize {
        if self.pending.is_empty() {
            let mut block: Vec<usize> = (0..self.factory.n_classes()).collect();
            block.shuffle(&mut substream(self.label_parent, self.blocks));
            self.blocks += 1;
            self.pending.extend(block);
        }
        self.pending.pop_front().unwrap_or(0)
    }

    pub fn next_labels(&mut self, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.next_label()).collect()
    }

    pub fn next_batch(&mut self, size: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
        let labels = self.next_labels(size);
        let start = self.position;
        let parent = self.sample_parent;
        let factory = self.factory;
        let rows = self
            .exec
            .try_map(size, |i| factory.sample_input(labels[i], derive_seed(parent, start + i as u64)))?;
        self.position += size as u64;
        Ok((Tensor::stack(&self.input_shape, &rows)?, labels))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epoch_samples_per_class: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub restarts: usize,
    pub validation_samples_per_class: usize,
    /// Improvement needed to reset the patience counter.
    pub min_delta: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epoch_samples_per_class: 1000,
            max_epochs: 25,
            patience: 5,
            restarts: 3,
            validation_samples_per_class: 100,
            min_delta: 0.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("epoch_samples_per_class", self.epoch_samples_per_class),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("restarts", self.restarts),
            ("validation_samples_per_class", self.validation_samples_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if !(self.min_delta >= 0.0) {
            return Err(invalid("min_delta must be >= 0"));
        }
        self.adam.validate()
    }
}

/// Stops once the monitored loss has gone `patience` epochs without
/// beating its best value by more than `min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, stale: 0 }
    }

    /// Records one epoch; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_accuracy";

pub fn write_history<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for h in history {
        writeln!(w, "{},{:.6},{:.4}", h.epoch, h.train_loss, h.val_accuracy)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub optimizer: AdamState<f32>,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    pub fn val_accuracy(&self) -> f64 {
        self.history.last().map(|h| h.val_accuracy).unwrap_or(0.0)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map(|h| h.train_loss).unwrap_or(f64::INFINITY)
    }
}

/// A fixed held-out set drawn from the factory.
struct ValidationSet {
    inputs: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

impl ValidationSet {
    fn draw(factory: &SampleFactory, per_class: usize, seed: u64, exec: Exec) -> Result<Self> {
        let n = factory.n_classes();
        let labels: Vec<usize> = (0..per_class * n).map(|i| i % n).collect();
        let inputs = exec.try_map(labels.len(), |i| factory.sample_input(labels[i], derive_seed(seed, i as u64)))?;
        Ok(Self { inputs, labels })
    }

    fn accuracy(&self, net: &Network<f32>, exec: Exec) -> Result<f64> {
        let hits = exec.try_map(self.inputs.len(), |i| Ok(predict(net, &self.inputs[i])? == self.labels[i]))?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    }
}

/// Arg-max class, lowest index on ties.
pub fn predict(net: &Network<f32>, input: &[f32]) -> Result<usize> {
    let probs = net.predict_sample(input)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

fn check_spec(spec: &NetworkSpec, factory: &SampleFactory) -> Result<()> {
    if spec.classes() != factory.n_classes() {
        return Err(Error::Shape(format!(
            "network has {} outputs for {} transmitters",
            spec.classes(),
            factory.n_classes()
        )));
    }
    let per = factory.features().representation.columns() * WINDOW;
    if spec.input_len() != per {
        return Err(Error::Shape(format!(
            "network input {:?} does not take {per} features",
            spec.input_shape
        )));
    }
    Ok(())
}

/// Samples per class drawn to set a leading input-scale layer.
pub const CALIBRATION_PER_CLASS: usize = 50;

fn train_with(
    spec: &NetworkSpec,
    factory: &SampleFactory,
    cfg: &TrainConfig,
    seed: u64,
    val: &ValidationSet,
    exec: Exec,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut net: Network<f32> = init_params(spec, &mut substream(seed, label("init")))?;
    if spec.layers.first() == Some(&LayerSpec::Scale) {
        let count = CALIBRATION_PER_CLASS * factory.n_classes();
        let mut cal = SampleStream::new(factory, derive_seed(seed, label("calibration")), &spec.input_shape, exec);
        let (x, _) = cal.next_batch(count)?;
        net.calibrate_input_scale(&x)?;
    }
    let mut adam = AdamState::new(cfg.adam, net.param_count());
    let mut stream = SampleStream::new(factory, derive_seed(seed, label("train")), &spec.input_shape, exec);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let per_epoch = cfg.epoch_samples_per_class * factory.n_classes();
    let mut history = Vec::new();
    let mut last_loss = None;
    for epoch in 1..=cfg.max_epochs {
        let mut done = 0;
        let mut loss_sum = 0.0;
        let mut batch_no = 0;
        while done < per_epoch {
            let size = cfg.batch_size.min(per_epoch - done);
            let (x, y) = stream.next_batch(size)?;
            let (loss, grad) = net.loss_and_grad(&x, &y, exec)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no, last_loss });
            }
            adam.step(&mut net.params, &grad)?;
            loss_sum += loss * size as f64;
            last_loss = Some(loss);
            done += size;
            batch_no += 1;
        }
        let train_loss = loss_sum / per_epoch as f64;
        let val_accuracy = val.accuracy(&net, exec)?;
        history.push(EpochRecord { epoch, train_loss, val_accuracy });
        if stopper.observe(train_loss) {
            break;
        }
    }
    Ok(TrainOutcome { network: net, optimizer: adam, history, seed, seconds: start.elapsed().as_secs_f64() })
}

/// Trains one network from `seed`.
pub fn train(
    spec: &NetworkSpec,
    factory: &SampleFactory,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_spec(spec, factory)?;
    let val = ValidationSet::draw(factory, cfg.validation_samples_per_class, derive_seed(seed, label("validation")), exec)?;
    train_with(spec, factory, cfg, seed, &val, exec)
}

#[derive(Clone, Debug)]
pub struct BestOf {
    pub best: TrainOutcome,
    pub index: usize,
    /// Validation accuracy of every restart, in order.
    pub accuracies: Vec<f64>,
    pub seconds: f64,
}

/// Seed of restart `r`; restart 0 uses the caller's seed unchanged.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, label("restart") ^ r as u64)
    }
}

/// Trains `cfg.restarts` networks and keeps the one with the highest
/// validation accuracy (then lower final loss, then lower index). All
/// restarts are scored on the same validation set.
pub fn train_best_of(
    spec: &NetworkSpec,
    factory: &SampleFactory,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<BestOf> {
    cfg.validate()?;
    check_spec(spec, factory)?;
    let start = Instant::now();
    let val = ValidationSet::draw(factory, cfg.validation_samples_per_class, derive_seed(seed, label("validation")), exec)?;
    let mut best: Option<(usize, TrainOutcome)> = None;
    let mut accuracies = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let out = train_with(spec, factory, cfg, restart_seed(seed, r), &val, exec)?;
        accuracies.push(out.val_accuracy());
        let better = match &best {
            None => true,
            Some((_, b)) => {
                out.val_accuracy() > b.val_accuracy()
                    || (out.val_accuracy() == b.val_accuracy() && out.final_loss() < b.final_loss())
            }
        };
        if better {
            best = Some((r, out));
        }
    }
    let (index, best) = best.ok_or_else(|| invalid("restarts must be positive"))?;
    Ok(BestOf { best, index, accuracies, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n_per_class: usize,
}

impl Evaluation {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.n_per_class * self.n_classes()
    }
}

/// Classifies `n_per_class` fresh samples of every class.
pub fn evaluate(
    net: &Network<f32>,
    factory: &SampleFactory,
    n_per_class: usize,
    seed: u64,
    exec: Exec,
) -> Result<Evaluation> {
    check_spec(net.spec(), factory)?;
    let n = factory.n_classes();
    let total = n * n_per_class;
    let parent = derive_seed(seed, label("evaluate"));
    let predictions = exec.try_map(total, |i| {
        let class = i % n;
        let x = factory.sample_input(class, derive_seed(parent, i as u64))?;
        predict(net, &x)
    })?;
    let mut confusion = vec![vec![0usize; n]; n];
    let mut hits = 0;
    for (i, &p) in predictions.iter().enumerate() {
        let class = i % n;
        confusion[class][p] += 1;
        if p == class {
            hits += 1;
        }
    }
    let accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok(Evaluation { accuracy, confusion, n_per_class })
}
