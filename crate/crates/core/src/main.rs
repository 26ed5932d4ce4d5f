use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use funnybench::dataset::{self, AugmentationPolicy, DatasetManifest, SplitSizes};
use funnybench::eval::{evaluate, EvalConfig, EvalSample};
use funnybench::explain::{required_capability, Method, MethodConfig, MethodId};
use funnybench::model::wire::{self, connect_external};
use funnybench::model::{train, ModelUnderTest, ReferenceCnn, TrainConfig, TrainingData};
use funnybench::render::RenderConfig;
use funnybench::report::{compare_reports, radar_svg, Report, RunInfo};
use funnybench::scenegen::sample_class_space;
use funnybench::{Error, Result};

/// Exit codes. Argument errors from the parser itself also exit with 2.
mod code {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const DATA: u8 = 4;
    pub const EXTERNAL: u8 = 5;
    pub const CAPABILITY: u8 = 6;
    pub const DIVERGENCE: u8 = 7;
}

#[derive(Parser)]
#[command(
    name = "funnybench",
    version,
    about = "Synthetic part-based benchmark for explanation methods"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (images, part maps and manifest).
    Gen(GenArgs),
    /// Train the built-in CNN on a generated dataset.
    Train(TrainArgs),
    /// Score an explanation method on the test split.
    Eval(EvalArgs),
    /// Compare several reports side by side.
    Compare(CompareArgs),
    /// Serve a built-in model over the wire protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Fraction of training images with at least one part removed.
    #[arg(long, default_value_t = 0.5)]
    removal_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Built-in model weights.
    #[arg(
        long,
        conflicts_with = "external",
        required_unless_present = "external"
    )]
    model: Option<PathBuf>,
    /// External model endpoint: tcp://host:port or stdio:<command>.
    #[arg(long)]
    external: Option<String>,
    #[arg(long)]
    method: MethodId,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    radar: Option<PathBuf>,
    /// Seed for the stochastic methods.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate only the first N test samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Samples used for threshold calibration.
    #[arg(long, default_value_t = 100)]
    calibration: usize,
    /// Use this threshold instead of calibrating one.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated threshold grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    ig_steps: Option<usize>,
    #[arg(long)]
    rise_masks: Option<usize>,
    #[arg(long)]
    lime_samples: Option<usize>,
    /// Write the report without its timing section.
    #[arg(long)]
    canonical: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    radar: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "tcp", required_unless_present = "tcp")]
    stdio: bool,
    /// host:port to listen on.
    #[arg(long)]
    tcp: Option<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => code::USAGE,
        Error::Io { .. } => code::IO,
        Error::Json { .. }
        | Error::Format(_)
        | Error::DimensionMismatch { .. }
        | Error::MalformedIntervention(_) => code::DATA,
        Error::Wire(_) => code::EXTERNAL,
        Error::UnsupportedCapability(_) => code::CAPABILITY,
        Error::Divergence { .. } => code::DIVERGENCE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(code::OTHER);
        }
    }
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let start = Instant::now();
    let space = sample_class_space(a.seed);
    let policy = AugmentationPolicy {
        fraction_with_removals: a.removal_fraction,
        ..Default::default()
    };
    let cfg = RenderConfig {
        resolution: a.resolution,
        ..Default::default()
    };
    let sizes = SplitSizes {
        train: a.train,
        test: a.test,
    };
    dataset::plan_dataset(&space, sizes, &policy, &cfg, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let manifest = dataset::generate_dataset(&space, sizes, &policy, &cfg, a.seed, &a.out)?;
    println!(
        "wrote {} train and {} test samples to {} in {:.1}s (manifest {})",
        manifest.splits.train.len(),
        manifest.splits.test.len(),
        a.out.display(),
        start.elapsed().as_secs_f64(),
        dataset::manifest_hash(&a.out)?
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    require_dir(&a.dataset, "dataset")?;
    let manifest = DatasetManifest::load(&a.dataset)?;
    let data = TrainingData::from_manifest(&manifest, &a.dataset)?;
    let res = manifest.render_config.resolution;
    let mut net = ReferenceCnn::new(res, res, manifest.class_space.len(), a.seed)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..Default::default()
    };
    let start = Instant::now();
    let log = train(&mut net, &data, &cfg)?;
    net.save(&a.out)?;
    if let Some(path) = &a.log {
        let text = serde_json::to_string_pretty(&log).map_err(|e| Error::Json {
            context: "training log".into(),
            source: e,
        })?;
        write_text(path, &text)?;
    }
    println!(
        "trained {} epochs in {:.1}s; test accuracy {:.4}; weights written to {}",
        cfg.epochs,
        start.elapsed().as_secs_f64(),
        log.final_accuracy().unwrap_or(0.0),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    require_dir(&a.dataset, "dataset")?;
    let manifest = DatasetManifest::load(&a.dataset)?;
    let dataset_hash = dataset::manifest_hash(&a.dataset)?;

    let (model, description): (Box<dyn ModelUnderTest>, String) = match (&a.model, &a.external) {
        (Some(path), _) => {
            require_file(path, "model weights")?;
            (
                Box::new(ReferenceCnn::load(path)?),
                format!("builtin:{}", path.display()),
            )
        }
        (None, Some(endpoint)) => (
            Box::new(connect_external(endpoint)?),
            format!("external:{endpoint}"),
        ),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "either --model or --external is required".into(),
            ))
        }
    };
    if let Some(cap) = required_capability(a.method) {
        let caps = model.capabilities();
        let ok = match cap {
            "gradients" => caps.gradients,
            _ => caps.activations,
        };
        if !ok {
            return Err(Error::UnsupportedCapability(cap));
        }
    }

    let mut config = MethodConfig::default();
    config.rise.seed = a.seed;
    config.lime.seed = a.seed;
    config.random_seed = a.seed;
    if let Some(s) = a.ig_steps {
        config.ig.steps = s;
    }
    if let Some(n) = a.rise_masks {
        config.rise.n_masks = n;
    }
    if let Some(n) = a.lime_samples {
        config.lime.n_perturb = n;
    }
    config.validate()?;
    let eval_cfg = EvalConfig {
        threshold_grid: a
            .grid
            .clone()
            .unwrap_or_else(|| EvalConfig::default().threshold_grid),
        calibration_size: a.calibration,
        fixed_threshold: a.threshold,
    };

    let test = manifest.split(dataset::Split::Test);
    let n = a.limit.unwrap_or(test.len()).min(test.len());
    let samples: Vec<EvalSample> = test[..n].iter().map(EvalSample::from).collect();
    // rendering must agree with the stored images
    if let Some(first) = test.first() {
        let stored = manifest.load_image(&a.dataset, first)?;
        let (rendered, _) = funnybench::render::render_scene(
            &manifest.class_space,
            &first.scene,
            &manifest.render_config,
        );
        if stored != rendered {
            log::warn!(
                "stored image {} differs from its re-rendering",
                first.sample_id
            );
        }
    }

    let method = Method {
        id: a.method,
        config: config.clone(),
    };
    let evaluation = evaluate(
        model.as_ref(),
        &method,
        &manifest.class_space,
        &manifest.render_config,
        &samples,
        &eval_cfg,
    )?;
    let report = Report::new(
        RunInfo {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            dataset: Some(a.dataset.display().to_string()),
            dataset_hash: Some(dataset_hash),
            model: description,
            method: a.method,
            method_config: config,
            eval_config: eval_cfg,
            seed: a.seed,
            split: "test".into(),
        },
        evaluation,
    );

    print_scores(&report);
    if let Some(path) = &a.report {
        let text = if a.canonical {
            report.canonical_json()?
        } else {
            report.to_json()?
        };
        write_text(path, &text)?;
    }
    if let Some(path) = &a.radar {
        write_text(
            path,
            &radar_svg(&[(a.method.name().to_string(), report.scores)]),
        )?;
    }
    Ok(())
}

fn print_scores(report: &Report) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "method {}  t* = {}",
        report.run.method, report.threshold
    );
    for (k, v) in report.scores.fields() {
        let _ = writeln!(out, "{k:<5} {v:.4}");
    }
    let c = &report.counts;
    let _ = writeln!(
        out,
        "samples {}  csdc kept {}  D kept {}  TS kept {}/{}",
        c.samples,
        c.csdc_kept,
        c.distractibility_kept,
        c.target_sensitivity_kept,
        c.contrast_pairs_found
    );
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &a.reports {
        require_file(path, "report")?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        reports.push((name, Report::from_json(&text)?));
    }
    let (table, warnings) = compare_reports(&reports);
    for w in warnings {
        eprintln!("{w}");
    }
    print!("{table}");
    if let Some(path) = &a.radar {
        let series: Vec<_> = reports.iter().map(|(n, r)| (n.clone(), r.scores)).collect();
        write_text(path, &radar_svg(&series))?;
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    require_file(&a.model, "model weights")?;
    let model = ReferenceCnn::load(&a.model)?;
    let io_err = |e: std::io::Error| Error::Wire(wire::WireError::Io(e));
    if a.stdio {
        let stdin = std::io::stdin();
        wire::serve(
            &model,
            BufReader::new(stdin.lock()),
            std::io::stdout().lock(),
        )
        .map_err(io_err)
    } else {
        let addr = a.tcp.expect("clap enforces --tcp or --stdio");
        let listener = TcpListener::bind(&addr).map_err(io_err)?;
        let local = listener.local_addr().map_err(io_err)?;
        // announced on stdout so callers binding port 0 can find it
        println!("listening on {local}");
        let _ = std::io::stdout().flush();
        wire::serve_tcp(&model, listener).map_err(io_err)
    }
}
