//! `ptsd`: run the progressive tempering sampler and its baseline, draw from
//! saved models, evaluate sample files, and tabulate finished runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ptsd_core::diffusion::{sample_sde, NoiseSchedule};
use ptsd_core::io::{load_model, read_samples, write_samples, RunDir};
use ptsd_core::metrics::{evaluate, EvalOptions, MAX_W2_SAMPLES};
use ptsd_core::pipeline::{
    apply_override, evaluate_model, execute, method_name, new_manifest, Ablation, Method, Persist, RunConfig,
    RunManifest, RunObserver, RunStatus,
};
use ptsd_core::{make_target, Error, SampleBuffer, TargetSpec};

mod report;

#[derive(Parser, Debug)]
#[command(name = "ptsd", version, about = "Progressive tempering sampler with diffusion")]
struct Cli {
    /// Worker threads for all parallel stages (default: all cores).
    #[arg(long, global = true, env = "PTSD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the progressive sampler.
    Run(RunArgs),
    /// Run full-ladder tempering and fit one model at the coldest level.
    BaselinePtdm(RunArgs),
    /// Run the progressive sampler with one ingredient switched off.
    Ablate {
        #[arg(long)]
        mode: Ablation,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Draw samples from a saved model.
    Sample(SampleArgs),
    /// Compare a sample file against reference samples.
    Evaluate(EvaluateArgs),
    /// Tabulate calls and metrics of finished runs as CSV.
    Report {
        /// Run directories (each holding a manifest.json).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key override, e.g. `--set refine.steps=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<output root>/<name>-<method>-s<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default run directories.
    #[arg(long, env = "PTSD_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    /// Skip the post-run evaluation against reference samples.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sampler {
    Ode,
    Sde,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Model file written by a run (`.ckpt` or `.json`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, value_enum, default_value = "ode")]
    sampler: Sampler,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 40.0)]
    sigma_max: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma_min: f64,
    /// Noise scale of the SDE sampler.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Target spec, e.g. `mog40`, `manywell:4`, `lj:13`, `gaussian:2`.
    #[arg(long)]
    target: TargetSpec,
    /// Rigidly align particle configurations for W2.
    #[arg(long)]
    aligned: bool,
    #[arg(long, default_value_t = 200)]
    bins: usize,
    /// Rows of each file used for W2.
    #[arg(long, default_value_t = MAX_W2_SAMPLES)]
    points: usize,
    /// Report JSON; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram CSV of the two energy distributions.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

/// Failure class, mapped to the exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn from_core(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::UnknownTarget(_) | Error::Json(_) => Failure::Config(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Run(args) => run(args, Method::Ptsd, None),
        Command::BaselinePtdm(args) => run(args, Method::Ptdm, None),
        Command::Ablate { mode, run: args } => run(args, Method::Ptsd, Some(mode)),
        Command::Sample(args) => sample(args).map_err(Failure::Runtime),
        Command::Evaluate(args) => evaluate_files(args),
        Command::Report { runs, out } => report::write(&runs, out.as_deref()).map_err(Failure::Runtime),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn ablation_override(mode: Ablation) -> String {
    let name = match mode {
        Ablation::NoGuidance => "no_guidance",
        Ablation::NoIs => "no_is",
    };
    format!("ablation={name}")
}

fn load_config(args: &RunArgs, ablation: Option<Ablation>) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(anyhow::anyhow!("{}: {e}", args.config.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(anyhow::anyhow!("{}: {e}", args.config.display())))?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(mode) = ablation {
        overrides.push(ablation_override(mode));
    }
    for o in &overrides {
        apply_override(&mut doc, o).map_err(Failure::from_core)?;
    }
    RunConfig::from_value(doc).map_err(Failure::from_core)
}

fn method_label(method: Method, cfg: &RunConfig) -> String {
    match method {
        Method::Ptsd => method_name(cfg),
        Method::Ptdm => "ptdm".into(),
    }
}

fn default_dir(args: &RunArgs, name: &str, method: &str, seed: Option<u64>) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        let seed = seed.map_or_else(|| "invalid".to_string(), |s| format!("s{s}"));
        args.output_root.join(format!("{name}-{method}-{seed}"))
    })
}

fn run(args: RunArgs, method: Method, ablation: Option<Ablation>) -> Result<(), Failure> {
    let cfg = match load_config(&args, ablation) {
        Ok(loaded) => loaded,
        Err(failure) => {
            write_failed_manifest(&args, method, &failure);
            return Err(failure);
        }
    };
    let label = method_label(method, &cfg);
    let dir = default_dir(&args, &cfg.name, &label, Some(cfg.seed));
    let mut observer = Progress::new(RunDir::create(&dir).map_err(|e| Failure::Runtime(e.into()))?);
    let target = make_target(&cfg.target).map_err(Failure::from_core)?;
    let mut manifest = new_manifest(&cfg, &label, &args.overrides);
    eprintln!("{label} on {} (seed {}) -> {}", cfg.target, cfg.seed, dir.display());

    let result = execute(&target, &cfg, method, &mut manifest, &mut observer);
    let model = match result {
        Ok(model) => model,
        Err(e) => {
            let _ = observer.dir.save_manifest(&manifest);
            return Err(Failure::from_core(e));
        }
    };
    if !args.no_eval {
        match evaluate_model(&target, &cfg, &model) {
            Ok(eval) => {
                let d = &mut observer.dir;
                let saved = (|| -> ptsd_core::Result<()> {
                    write_samples(&d.root().join("samples.csv"), eval.samples.view())?;
                    write_samples(&d.root().join("reference.csv"), eval.reference.view())?;
                    let mut hist = std::fs::File::create(d.root().join("histogram.csv"))?;
                    eval.histogram.write_csv(&mut hist)?;
                    std::fs::write(d.root().join("evaluation.json"), serde_json::to_vec_pretty(&eval.report)?)?;
                    Ok(())
                })();
                if let Err(e) = saved {
                    let _ = d.save_manifest(&manifest);
                    return Err(Failure::Runtime(e.into()));
                }
                for (role, file) in [
                    ("samples", "samples.csv"),
                    ("reference", "reference.csv"),
                    ("histogram", "histogram.csv"),
                    ("evaluation", "evaluation.json"),
                ] {
                    d.record(role, file);
                }
                manifest.evaluation = Some(serde_json::to_value(&eval.report).expect("report serializes"));
            }
            Err(Error::Unsupported(msg)) => eprintln!("evaluation skipped: {msg}"),
            Err(e) => {
                let _ = observer.dir.save_manifest(&manifest);
                return Err(Failure::from_core(e));
            }
        }
    }
    observer.dir.save_manifest(&manifest).map_err(|e| Failure::Runtime(e.into()))?;
    let summary = json!({
        "run_dir": dir,
        "method": manifest.method,
        "calls": manifest.calls,
        "wall_seconds": manifest.wall_seconds,
        "evaluation": manifest.evaluation,
    });
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

/// Records a run that never started because its configuration was rejected.
fn write_failed_manifest(args: &RunArgs, method: Method, failure: &Failure) {
    let (Failure::Config(e) | Failure::Runtime(e)) = failure;
    let stem = args.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let label = match method {
        Method::Ptsd => "ptsd",
        Method::Ptdm => "ptdm",
    };
    let dir = default_dir(args, stem, label, None);
    let mut manifest = RunManifest::new(label, "unknown", args.seed.unwrap_or(0), Value::Null);
    manifest.overrides = args.overrides.clone();
    manifest.status = RunStatus::Failed { message: format!("{e:#}") };
    let saved = std::fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| manifest.save(&dir.join("manifest.json")));
    if saved.is_ok() {
        eprintln!("manifest written to {}", dir.display());
    }
}

/// Run-directory observer that also reports each finished stage.
struct Progress {
    dir: RunDir,
    reported: usize,
}

impl Progress {
    fn new(dir: RunDir) -> Self {
        Self { dir, reported: 0 }
    }
}

impl RunObserver for Progress {
    fn model(&mut self, level: usize, model: &dyn Persist) -> ptsd_core::Result<()> {
        self.dir.model(level, model)
    }

    fn buffer(&mut self, level: usize, buffer: &SampleBuffer) -> ptsd_core::Result<()> {
        self.dir.buffer(level, buffer)
    }

    fn manifest(&mut self, manifest: &RunManifest) -> ptsd_core::Result<()> {
        for s in &manifest.stages[self.reported..] {
            let level = s.level.map_or_else(String::new, |l| format!(" level {l}"));
            let temp = s.temperature.map_or_else(String::new, |t| format!(" T={t:.4}"));
            eprintln!(
                "  {:<13}{level}{temp}  calls {:>9}  {:.1}s",
                serde_json::to_value(s.stage).expect("stage serializes").as_str().unwrap_or("?"),
                s.calls.density_calls,
                s.wall_seconds
            );
        }
        self.reported = manifest.stages.len();
        self.dir.manifest(manifest)
    }
}

fn sample(args: SampleArgs) -> anyhow::Result<()> {
    let model = load_model(&args.checkpoint)?;
    let schedule = NoiseSchedule { sigma_max: args.sigma_max, sigma_min: args.sigma_min, steps: args.steps, ..NoiseSchedule::default() };
    let eta = match args.sampler {
        Sampler::Ode => 0.0,
        Sampler::Sde => args.eta,
    };
    let x = sample_sde(&model, args.count, &schedule, eta, args.seed)?;
    write_samples(&args.out, x.view())?;
    eprintln!("{} samples written to {}", x.nrows(), args.out.display());
    Ok(())
}

fn evaluate_files(args: EvaluateArgs) -> Result<(), Failure> {
    let target = make_target(&args.target).map_err(Failure::from_core)?;
    let runtime = |e: Error| Failure::Runtime(e.into());
    let samples = read_samples(&args.samples).map_err(runtime)?;
    let reference = read_samples(&args.reference).map_err(runtime)?;
    let opts = EvalOptions { w2_points: args.points, bins: args.bins, aligned: args.aligned, ..EvalOptions::default() };
    let (report, hist) = evaluate(samples.view(), reference.view(), &target, None, &opts).map_err(Failure::from_core)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => write_text(path, &text).map_err(Failure::Runtime)?,
        None => println!("{text}"),
    }
    if let Some(path) = &args.histogram {
        let file = std::fs::File::create(path).map_err(|e| Failure::Runtime(e.into()))?;
        hist.write_csv(file).map_err(runtime)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, format!("{text}\n"))?;
    Ok(())
}
