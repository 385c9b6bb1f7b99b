use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hiros_bus::{bus_port, serve_bus, serve_ws, ws_port, BridgeConfig, Broker};
use hiros_cli::demo::{run_demo, DemoOptions, DemoScript};
use hiros_cli::report::{evaluate_predictions, labels, render};
use hiros_cli::services::{spawn_protocol, spawn_recognizer, spawn_robot, RecognizerOptions, RobotOptions};
use hiros_core::dataset::{
    generate, write_dataset, Examples, GenSpec, Jitter, Manifest, Stage, LOW_RECALL_COMMANDS, NUM_CLASSES,
};
use hiros_core::eval::{pooled_cv, size_sweep, SweepConfig};
use hiros_core::model::{
    cross_validate, evaluate, load_checkpoint, save_checkpoint, train_fold, GestureNet, ModelConfig, TrainOptions,
};
use hiros_core::robotsim::demo_world;
use hiros_core::stream::{inference_throughput, SmootherConfig};

#[derive(Parser)]
#[command(name = "hiros", version, about = "Gesture-driven robot control pipeline")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic gesture dataset.
    GenData(GenDataArgs),
    /// Cross-validate and optionally fit a final model.
    Train(TrainArgs),
    /// Confusion matrix, per-class metrics, recall pruning and size sweeps.
    Eval(EvalArgs),
    /// Stream recognizer on the bus.
    ServeRecognizer(RecognizerArgs),
    /// Control protocol and robot simulator on the bus.
    ServeRobot(RobotArgs),
    /// Broker and websocket bridge.
    ServeBus(BusArgs),
    /// Scripted end-to-end run; exits 0 iff the final state matches.
    Demo(DemoArgs),
    /// Streaming inference throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long, default_value_t = 10)]
    participants: u32,
    /// Clips per class per participant.
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated class ids (default: all 27).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Phase jitter in cycles; 0.5 covers every starting phase.
    #[arg(long, default_value_t = Jitter::default().phase)]
    phase_jitter: f64,
    #[arg(long, default_value_t = Jitter::default().noise_sigma)]
    noise: f64,
}

#[derive(Args, Clone)]
struct TrainingFlags {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seeds initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seeds the participant-to-fold assignment.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl TrainingFlags {
    fn options(&self, track_validation: bool) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            track_validation,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Fit on all clips after cross-validation and save the checkpoint here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
    /// Write the cross-validation result as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Drop command classes below this recall.
    #[arg(long)]
    prune_recall: Option<f64>,
    /// Comma-separated clips-per-class sizes for a Stage 1 vs Stage 2 sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Cross-validate fresh models with the checkpoint's architecture
    /// instead of scoring the checkpoint itself.
    #[arg(long)]
    retrain: bool,
    #[command(flatten)]
    training: TrainingFlags,
    /// Directory for confusion.csv, confusion.json, report.json, sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BusAddr {
    /// Broker address (default 127.0.0.1 on HIROS_BUS_PORT or 7447).
    #[arg(long)]
    bus: Option<String>,
}

impl BusAddr {
    fn resolve(&self) -> Result<SocketAddr> {
        let text = match &self.bus {
            Some(b) => b.clone(),
            None => format!("127.0.0.1:{}", bus_port()?),
        };
        text.to_socket_addrs()
            .with_context(|| format!("bad bus address {text:?}"))?
            .next()
            .with_context(|| format!("{text:?} resolves to nothing"))
    }
}

#[derive(Args)]
struct RecognizerArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    bus: BusAddr,
    /// Comma-separated class ids never emitted.
    #[arg(long, value_delimiter = ',')]
    suppress: Vec<usize>,
    /// Also suppress the low-recall commands dropped from the deployed set.
    #[arg(long)]
    deployed: bool,
    #[arg(long, default_value_t = SmootherConfig::default().vote_window)]
    vote_window: usize,
    #[arg(long, default_value_t = SmootherConfig::default().emit_threshold)]
    threshold: f64,
    #[arg(long, default_value_t = SmootherConfig::default().refractory_windows)]
    refractory: usize,
    #[arg(long, default_value_t = SmootherConfig::default().stride)]
    stride: usize,
    /// Frame rate of `camera/inject` playback.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RobotArgs {
    #[command(flatten)]
    bus: BusAddr,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 10.0)]
    state_hz: f64,
}

#[derive(Args)]
struct BusArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Default: HIROS_BUS_PORT or 7447.
    #[arg(long)]
    port: Option<u16>,
    /// Default: HIROS_WS_PORT or 7448.
    #[arg(long)]
    ws_port: Option<u16>,
    /// Serve the operator console's static files on the websocket port.
    #[arg(long)]
    with_console: bool,
    #[arg(long, default_value = "console/dist")]
    console_dir: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// JSON script; defaults to the handover sequence.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Recognizer checkpoint; a small demo model is trained when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use services already running on this bus.
    #[arg(long)]
    bus: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = DemoOptions::default().seed)]
    seed: u64,
    /// Write the run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    windows: usize,
    /// Checkpoint to time; default is a freshly initialized default model.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").init();
    let result = match cli.command {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::ServeRecognizer(a) => serve_recognizer(a),
        Cmd::ServeRobot(a) => serve_robot(a),
        Cmd::ServeBus(a) => serve_bus_cmd(a),
        Cmd::Demo(a) => demo(a),
        Cmd::Bench(a) => bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let spec = GenSpec {
        stage: Stage::try_from(a.stage).map_err(anyhow::Error::msg)?,
        participants: a.participants,
        clips_per_class_per_participant: a.per_class,
        classes: a.classes.unwrap_or_else(|| (0..NUM_CLASSES).collect()),
        frames: a.frames,
        height: a.height,
        width: a.width,
        jitter: Jitter {
            phase: a.phase_jitter,
            noise_sigma: a.noise,
            ..Jitter::default()
        },
        seed: a.seed,
        ..GenSpec::default()
    };
    let (clips, manifest) = generate(&spec)?;
    write_dataset(&a.out, &clips, &manifest)?;
    println!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_examples(manifest: &Path) -> Result<(Manifest, Examples)> {
    let m = Manifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let root = if manifest.is_dir() {
        manifest.to_path_buf()
    } else {
        manifest.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let clips = m.load_clips(&root)?;
    if clips.is_empty() {
        bail!("manifest {} lists no clips", manifest.display());
    }
    let data = Examples::from_clips(&clips)?;
    Ok((m, data))
}

/// Architecture matching the dataset's clip shape.
fn config_for(data: &Examples, seed: u64) -> ModelConfig {
    let [c, t, h, w] = data.sample_shape();
    ModelConfig {
        frames: t,
        height: h,
        width: w,
        channels: c,
        seed,
        ..ModelConfig::default()
    }
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let (_, data) = load_examples(&a.manifest)?;
    let config = config_for(&data, a.training.seed);
    let t = &a.training;
    let started = Instant::now();
    let cv = cross_validate(&config, &data, t.folds, t.split_seed, &t.options(true))?;
    for (i, acc) in cv.fold_accuracies.iter().enumerate() {
        println!("fold {}: {:.1}%", i + 1, 100.0 * acc);
    }
    let summary = pooled_cv(&cv.fold_accuracies)?;
    println!(
        "cross-validated accuracy: {summary} (pooled {:.1}%, {} clips, {:.0}s)",
        100.0 * cv.pooled_accuracy(),
        data.len(),
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_vec_pretty(&cv)?)?;
    }
    if let Some(out) = &a.out {
        let mut net = GestureNet::build(config)?;
        let r = train_fold(&mut net, &data, None, &t.options(false))?;
        save_checkpoint(&net, out)?;
        println!(
            "saved {} (training accuracy {:.1}%)",
            out.display(),
            100.0 * r.train_accuracy.last().copied().unwrap_or(0.0)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    if let Some(t) = a.prune_recall {
        if !(0.0..=1.0).contains(&t) {
            bail!("--prune-recall must be within [0, 1]");
        }
    }
    let net = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let (manifest, data) = load_examples(&a.manifest)?;
    let t = &a.training;
    let (preds, folds) = if a.retrain {
        let mut config = net.config().clone();
        config.seed = t.seed;
        let cv = cross_validate(&config, &data, t.folds, t.split_seed, &t.options(false))?;
        (cv.predictions, cv.folds)
    } else {
        let (_, preds) = evaluate(&net, &data)?;
        let map = hiros_core::dataset::assign_folds(data.groups(), t.folds, t.split_seed)?;
        let folds = data.groups().iter().map(|g| map[g]).collect();
        (preds, folds)
    };
    let report = evaluate_predictions(&preds, data.labels(), Some(&folds), a.prune_recall)?;
    print!("{}", render(&report));
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("confusion.csv"), report.confusion.to_csv(&labels()))?;
        fs::write(dir.join("confusion.json"), serde_json::to_vec_pretty(&report.confusion)?)?;
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    if let Some(sizes) = a.sweep {
        let base = manifest.spec.clone().unwrap_or_default();
        let config = SweepConfig {
            sizes,
            stages: vec![Stage::Uninstructed, Stage::Demonstrated],
            folds: t.folds,
            split_seed: t.split_seed,
            base,
            model: ModelConfig {
                seed: t.seed,
                ..net.config().clone()
            },
            train: t.options(false),
        };
        let sweep = size_sweep(&config, |size, stage, cv| {
            log::info!("sweep size {size} stage {}: {:.3}", stage as u8, cv.pooled_accuracy());
        })?;
        print!("{}", sweep.to_table());
        if let Some(dir) = &a.out {
            fs::write(dir.join("sweep.csv"), sweep.to_csv())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve_recognizer(a: RecognizerArgs) -> Result<ExitCode> {
    let net = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let mut suppressed = a.suppress.clone();
    if a.deployed {
        suppressed.extend(LOW_RECALL_COMMANDS);
    }
    let opts = RecognizerOptions {
        smoother: SmootherConfig {
            vote_window: a.vote_window,
            emit_threshold: a.threshold,
            refractory_windows: a.refractory,
            stride: a.stride,
        },
        suppressed,
        inject_fps: a.fps,
        seed: a.seed,
        ..RecognizerOptions::default()
    };
    let bus = a.bus.resolve()?;
    let service = spawn_recognizer(bus, net, opts)?;
    eprintln!("recognizer connected to {bus}");
    service.join()?;
    Ok(ExitCode::SUCCESS)
}

fn serve_robot(a: RobotArgs) -> Result<ExitCode> {
    let bus = a.bus.resolve()?;
    let protocol = spawn_protocol(bus)?;
    let robot = spawn_robot(
        bus,
        RobotOptions {
            speed: a.speed,
            state_hz: a.state_hz,
            ..RobotOptions::new(demo_world())
        },
    )?;
    eprintln!("protocol and robot connected to {bus}");
    robot.join()?;
    protocol.join()?;
    Ok(ExitCode::SUCCESS)
}

fn serve_bus_cmd(a: BusArgs) -> Result<ExitCode> {
    let port = match a.port {
        Some(p) => p,
        None => bus_port()?,
    };
    let ws = match a.ws_port {
        Some(p) => p,
        None => ws_port()?,
    };
    let broker = serve_bus((a.host.as_str(), port), Broker::default())
        .with_context(|| format!("binding broker on {}:{port}", a.host))?;
    let static_dir = if a.with_console {
        if !a.console_dir.is_dir() {
            log::warn!("console assets not found at {}", a.console_dir.display());
        }
        Some(a.console_dir.clone())
    } else {
        None
    };
    let bridge = serve_ws(
        (a.host.as_str(), ws),
        BridgeConfig {
            bus_addr: broker.addr(),
            static_dir,
        },
    )
    .with_context(|| format!("binding websocket bridge on {}:{ws}", a.host))?;
    eprintln!("broker on {}, websocket bridge on {}", broker.addr(), bridge.addr());
    if a.with_console {
        eprintln!("console at http://{}/", bridge.addr());
    }
    broker.join();
    bridge.join();
    Ok(ExitCode::SUCCESS)
}

fn demo(a: DemoArgs) -> Result<ExitCode> {
    let script: DemoScript = match &a.script {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => DemoScript::default(),
    };
    let model = match &a.model {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let bus = match &a.bus {
        Some(b) => Some(BusAddr { bus: Some(b.clone()) }.resolve()?),
        None => None,
    };
    let report = run_demo(DemoOptions {
        script,
        model,
        bus,
        robot_speed: a.speed,
        seed: a.seed,
    })?;
    for s in &report.steps {
        match &s.recognized {
            Some(p) => println!("{:<22} recognized (p={:.2}) after {} frames", s.label, p.prob, s.frames),
            None => println!("{:<22} not recognized after {} frames", s.label, s.frames),
        }
    }
    if let Some(st) = &report.final_state {
        let s = &st.snapshot;
        println!(
            "final base ({:.6}, {:.6}), object {:?}, handover {:?}",
            s.pose.x, s.pose.y, s.world.object, s.world.handover
        );
    }
    if let Some(att) = &report.attention {
        println!("attention {:?}", att.state.attention);
    }
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_vec_pretty(&report)?)?;
    }
    for f in &report.failures {
        eprintln!("demo: {f}");
    }
    println!(
        "demo {} in {:.1}s",
        if report.passed() { "passed" } else { "FAILED" },
        report.elapsed_s
    );
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let net = match &a.model {
        Some(p) => load_checkpoint(p)?,
        None => GestureNet::build(ModelConfig::default())?,
    };
    let rate = inference_throughput(&net, a.windows.max(1))?;
    let c = net.config();
    println!(
        "{rate:.1} windows/s on {}x{}x{}x{} clips ({} parameters); target 30 windows/s {}",
        c.frames,
        c.height,
        c.width,
        c.channels,
        net.parameter_count(),
        if rate >= 30.0 { "met" } else { "not met" }
    );
    Ok(ExitCode::SUCCESS)
}
