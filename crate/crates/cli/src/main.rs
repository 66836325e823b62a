use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use pafprint::config::KvMap;
use pafprint::experiments::{run_study_partial, train_single, write_results, ExperimentConfig, Preset, ResultRecord, Study};
use pafprint::modelgen::{fit_population, generate_models, GeneratorSpec};
use pafprint::nn::{write_checkpoint, Checkpoint};
use pafprint::plot::{svg_chart, write_plot_data};
use pafprint::saleh::{fit_saleh, load_measurements, read_models, write_models, SalehModel};
use pafprint::trainer::write_history;
use pafprint::{exec, Exec, SimRng};

#[derive(Parser, Debug)]
#[command(name = "pafprint", version, about = "Amplifier fingerprinting simulation laboratory")]
struct Cli {
    /// Master seed. Overrides any `seed` in the config; generated and printed when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Start from a built-in configuration.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyArg {
    Arch,
    Variability,
    Ntx,
    Snr,
    Pktlen,
    Modulation,
}

impl From<StudyArg> for Study {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::Arch => Study::Arch,
            StudyArg::Variability => Study::Variability,
            StudyArg::Ntx => Study::Ntx,
            StudyArg::Snr => Study::Snr,
            StudyArg::Pktlen => Study::PktLen,
            StudyArg::Modulation => Study::Modulation,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a Saleh AM/AM model to each device of a measurement CSV.
    Fit {
        input: PathBuf,
        /// Models CSV (default: <out>/models.csv).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Population statistics of fitted models, written as a generator spec.
    Population {
        models: PathBuf,
        /// Spec file (default: <out>/generator.txt).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw a synthetic transmitter population.
    GenModels {
        #[arg(long)]
        n: Option<usize>,
        /// Variability coefficient.
        #[arg(long)]
        s: Option<f64>,
        /// Generator spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Key=value config or a previous manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Models CSV (default: <out>/models.csv).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train and test one classifier at a single operating point.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run one of the parameter studies.
    Sweep {
        #[arg(value_enum)]
        study: StudyArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    match exec::with_jobs(jobs, move || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let ctx = Ctx { seed: cli.seed, preset: cli.preset.map(Preset::from), out: cli.out, command_line };
    match cli.command {
        Command::Fit { input, output } => fit(&ctx, &input, output),
        Command::Population { models, output } => population(&ctx, &models, output),
        Command::GenModels { n, s, spec, config, output } => gen_models(&ctx, n, s, spec, config, output),
        Command::Train { config, set } => train(&ctx, config, &set),
        Command::Sweep { study, config, set } => sweep(&ctx, study.into(), config, &set),
    }
}

struct Ctx {
    seed: Option<u64>,
    preset: Option<Preset>,
    out: PathBuf,
    command_line: String,
}

impl Ctx {
    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn preset_name(&self) -> &'static str {
        match self.preset {
            Some(Preset::Desk) => "desk",
            Some(Preset::Paper) => "paper",
            None => "none",
        }
    }

    /// Layers base, config file and `--set` overrides, then settles the seed.
    fn resolve(&self, base: KvMap, config: Option<&Path>, sets: &[String]) -> Result<KvMap> {
        let mut m = base;
        if let Some(path) = config {
            let file = KvMap::load(path).with_context(|| format!("reading config {}", path.display()))?;
            m.merge(&file);
        }
        for kv in sets {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got `{kv}`"))?;
            m.set(k.trim(), v.trim());
        }
        let manifest_keys: Vec<String> =
            m.keys().filter(|k| k.starts_with(pafprint::experiments::MANIFEST_PREFIX)).map(String::from).collect();
        for k in manifest_keys {
            m.remove(&k);
        }
        if let Some(seed) = self.seed {
            m.set("seed", seed);
        } else if !m.contains("seed") {
            let seed: u64 = rand::random();
            eprintln!("seed: {seed}");
            m.set("seed", seed);
        }
        Ok(m)
    }

    fn write_manifest(&self, path: &Path, config: &KvMap, artifacts: &[(&str, &Path)]) -> Result<()> {
        let mut m = config.clone();
        m.set("manifest.tool_version", env!("CARGO_PKG_VERSION"));
        m.set("manifest.timestamp", chrono::Utc::now().to_rfc3339());
        m.set("manifest.command", &self.command_line);
        m.set("manifest.preset", self.preset_name());
        for (name, p) in artifacts {
            m.set(&format!("manifest.artifact.{name}"), p.display());
        }
        fs::write(path, m.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn tx_ids(models: &[SalehModel]) -> Vec<(String, SalehModel)> {
    models.iter().enumerate().map(|(i, m)| (format!("tx{i}"), *m)).collect()
}

fn fit(ctx: &Ctx, input: &Path, output: Option<PathBuf>) -> Result<()> {
    let meas = load_measurements(input).with_context(|| format!("reading {}", input.display()))?;
    let mut models = Vec::with_capacity(meas.len());
    println!("device_id,alpha,beta,residual_rms");
    for m in &meas {
        let model = fit_saleh(m).with_context(|| format!("fitting device `{}`", m.device_id))?;
        println!("{},{},{},{:.6e}", m.device_id, model.alpha, model.beta, m.residual_rms(&model));
        models.push((m.device_id.clone(), model));
    }
    let path = match output {
        Some(p) => p,
        None => ctx.out_dir()?.join("models.csv"),
    };
    let mut w = create(&path)?;
    write_models(&mut w, &models)?;
    w.flush()?;
    eprintln!("wrote {} models to {}", models.len(), path.display());
    Ok(())
}

fn population(ctx: &Ctx, models_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let file = File::open(models_path).with_context(|| format!("opening {}", models_path.display()))?;
    let models = read_models(BufReader::new(file)).with_context(|| format!("reading {}", models_path.display()))?;
    let ms: Vec<SalehModel> = models.into_iter().map(|(_, m)| m).collect();
    let stats = fit_population(&ms)?;
    let text = stats.to_text();
    print!("{text}");
    let path = match output {
        Some(p) => p,
        None => ctx.out_dir()?.join("generator.txt"),
    };
    let mut w = create(&path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn gen_models(
    ctx: &Ctx,
    n: Option<usize>,
    s: Option<f64>,
    spec: Option<PathBuf>,
    config: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<()> {
    let mut base = KvMap::new();
    let generator = match &spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            GeneratorSpec::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GeneratorSpec::default(),
    };
    generator.write_kv(&mut base, "generator.");
    let mut sets = Vec::new();
    if let Some(n) = n {
        sets.push(format!("n={n}"));
    }
    if let Some(s) = s {
        sets.push(format!("generator.s={s}"));
    }
    let m = ctx.resolve(base, config.as_deref(), &sets)?;
    for k in m.keys() {
        if k != "n" && k != "seed" && !k.starts_with("generator.") {
            bail!("unknown key `{k}` for gen-models");
        }
    }
    let n: usize = m.require("n")?;
    let seed: u64 = m.require("seed")?;
    let generator = GeneratorSpec::from_kv(&m, "generator.")?;
    let mut rng = SimRng::seed_from_u64(seed);
    let models = generate_models(&generator, n, &mut rng, Exec::default())?;

    let path = match output {
        Some(p) => p,
        None => ctx.out_dir()?.join("models.csv"),
    };
    let mut w = create(&path)?;
    write_models(&mut w, &tx_ids(&models))?;
    w.flush()?;
    let manifest = path.with_extension("manifest.txt");
    ctx.write_manifest(&manifest, &m, &[("models", &path)])?;
    eprintln!("wrote {n} models to {}", path.display());
    Ok(())
}

fn train(ctx: &Ctx, config: Option<PathBuf>, sets: &[String]) -> Result<()> {
    let base = match ctx.preset {
        Some(p) => ExperimentConfig::preset(Study::Variability, p).base_kv(),
        None => KvMap::new(),
    };
    let m = ctx.resolve(base, config.as_deref(), sets)?;
    let cfg = ExperimentConfig::from_base_kv(&m)?;
    let run = train_single(&cfg, Exec::default())?;
    let out = ctx.out_dir()?;

    let ckpt_path = out.join("model.ckpt");
    let history_path = out.join("history.csv");
    let tx_path = out.join("transmitters.csv");
    let manifest_path = out.join("train_manifest.txt");

    let best = &run.best.best;
    let ckpt = Checkpoint {
        network: best.network.clone(),
        optimizer: best.optimizer.clone(),
        seed_lineage: run.seed_lineage.clone(),
    };
    let mut w = create(&ckpt_path)?;
    write_checkpoint(&mut w, &ckpt)?;
    w.flush()?;
    let mut w = create(&history_path)?;
    write_history(&mut w, &best.history)?;
    w.flush()?;
    let mut w = create(&tx_path)?;
    write_models(&mut w, &tx_ids(&run.models))?;
    w.flush()?;
    ctx.write_manifest(
        &manifest_path,
        &cfg.base_kv(),
        &[("checkpoint", &ckpt_path), ("history", &history_path), ("transmitters", &tx_path)],
    )?;

    println!("restarts: {:?}", run.best.accuracies);
    println!("epochs: {}", best.epochs());
    println!("val_accuracy: {:.4}", best.val_accuracy());
    println!("test_accuracy: {:.4}", run.test.accuracy);
    println!("chance: {}", 1.0 / cfg.n_tx as f64);
    Ok(())
}

fn sweep(ctx: &Ctx, study: Study, config: Option<PathBuf>, sets: &[String]) -> Result<()> {
    let base = match ctx.preset {
        Some(p) => ExperimentConfig::preset(study, p).to_kv(),
        None => {
            let mut m = KvMap::new();
            m.set("study", study);
            m
        }
    };
    let m = ctx.resolve(base, config.as_deref(), sets)?;
    if m.raw("study") != Some(study.name()) {
        bail!("config is for study `{}`, not `{study}`", m.raw("study").unwrap_or(""));
    }
    let cfg = ExperimentConfig::from_kv(&m)?;
    let out = ctx.out_dir()?.to_path_buf();
    let results_path = out.join(format!("{study}_results.csv"));
    let dat_path = out.join(format!("{study}.dat"));
    let svg_path = out.join(format!("{study}.svg"));
    let manifest_path = out.join(format!("{study}_manifest.txt"));
    let config_kv = cfg.to_kv();

    let progress = |recs: &[ResultRecord]| {
        for r in recs {
            eprintln!("{} {}={} {} n_tx={} accuracy={:.4}", r.study, r.param, r.value, r.curve(), r.n_tx, r.accuracy);
        }
    };
    let (records, err) = run_study_partial(&cfg, Exec::default(), &progress);
    if let Some(e) = err {
        let partial = out.join(format!("{study}_results.csv.partial"));
        let mut w = create(&partial)?;
        write_results(&mut w, &records)?;
        w.flush()?;
        ctx.write_manifest(&manifest_path, &config_kv, &[("partial_results", &partial)])?;
        return Err(anyhow::Error::new(e).context(format!("{study} sweep failed; partial results in {}", partial.display())));
    }

    let mut w = create(&results_path)?;
    write_results(&mut w, &records)?;
    w.flush()?;
    let mut w = create(&dat_path)?;
    write_plot_data(&mut w, &records)?;
    w.flush()?;
    let mut artifacts: Vec<(&str, &Path)> = vec![("results", &results_path), ("plot_data", &dat_path)];
    if cfg.svg {
        fs::write(&svg_path, svg_chart(&records, &format!("{study} study")))?;
        artifacts.push(("svg", &svg_path));
    }
    ctx.write_manifest(&manifest_path, &config_kv, &artifacts)?;
    write_results(std::io::stdout().lock(), &records)?;
    Ok(())
}
