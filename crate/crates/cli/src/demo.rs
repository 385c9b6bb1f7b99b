//! Scripted end-to-end run: gestures are rendered into `camera/frames` and
//! the robot's final state is checked against the script's expectation.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use hiros_bus::{serve_bus, topics, Broker, BusClient};
use hiros_core::dataset::motion::FrameDims;
use hiros_core::dataset::{class_by_label, class_label, generate, is_background, Examples, GenSpec, Jitter, Stage};
use hiros_core::model::{train_fold, GestureNet, ModelConfig, TrainOptions};
use hiros_core::protocol::{Attention, Command};
use hiros_core::robotsim::demo_world;
use hiros_core::stream::PredictionEvent;
use serde::{Deserialize, Serialize};

use crate::messages::{AttentionMessage, RobotStateMessage};
use crate::player::GesturePlayer;
use crate::services::{spawn_protocol, spawn_recognizer, spawn_robot, RecognizerOptions, RobotOptions};

/// Classes the built-in demo model is trained on.
pub const DEMO_CLASSES: [usize; 10] = [0, 1, 3, 8, 9, 22, 23, 24, 25, 26];

/// Performance variation of the demo operator: full-cycle phase, small
/// amplitude and placement changes.
pub const DEMO_JITTER: Jitter = Jitter {
    amplitude: 0.05,
    phase: 0.5,
    offset_px: 1.0,
    noise_sigma: 8.0,
};

/// A gesture named by class id or by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GestureRef {
    Id(usize),
    Label(String),
}

impl GestureRef {
    pub fn resolve(&self) -> Result<usize> {
        match self {
            GestureRef::Id(id) if *id < hiros_core::dataset::NUM_CLASSES => Ok(*id),
            GestureRef::Id(id) => bail!("class id {id} out of range"),
            GestureRef::Label(l) => class_by_label(l).with_context(|| format!("unknown gesture label {l:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    /// Final base position, world frame.
    pub base: [f64; 2],
    pub tolerance: f64,
    pub object_at_handover: bool,
    pub attention: Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoScript {
    pub gestures: Vec<GestureRef>,
    pub fps: f64,
    /// Give up on a gesture that is not recognized within this many frames.
    pub max_gesture_frames: usize,
    /// Idle frames played after each recognized gesture, at minimum.
    pub idle_frames: usize,
    /// Wall-clock limit for the robot to finish after a gesture.
    pub settle_timeout_s: f64,
    /// Variation between rendered performances.
    pub jitter: Jitter,
    pub expect: Expectation,
}

impl Default for DemoScript {
    fn default() -> Self {
        use Command::*;
        DemoScript {
            gestures: [Start, ComeForward, MoveToTheRight, PointToObject, MoveToTheLeft, Resume, Undo, Stop]
                .into_iter()
                .map(|c| GestureRef::Label(c.label().into()))
                .collect(),
            fps: 30.0,
            max_gesture_frames: 150,
            idle_frames: 32,
            settle_timeout_s: 30.0,
            jitter: DEMO_JITTER,
            expect: Expectation {
                base: [0.25, -0.25],
                tolerance: 1e-9,
                object_at_handover: true,
                attention: Attention::Shutdown,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub script: DemoScript,
    /// Recognizer model; the built-in demo model is trained when absent.
    pub model: Option<GestureNet>,
    /// Use services already running on this bus instead of starting them.
    pub bus: Option<SocketAddr>,
    pub robot_speed: f64,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            script: DemoScript::default(),
            model: None,
            bus: None,
            robot_speed: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub class_id: usize,
    pub label: String,
    pub recognized: Option<PredictionEvent>,
    pub frames: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub steps: Vec<StepReport>,
    /// Non-background predictions that did not match the gesture on screen.
    pub stray_predictions: Vec<PredictionEvent>,
    pub final_state: Option<RobotStateMessage>,
    pub attention: Option<AttentionMessage>,
    pub failures: Vec<String>,
    pub elapsed_s: f64,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Trains the small recognizer used by the demo on [`DEMO_CLASSES`] rendered
/// with [`DEMO_JITTER`]. Phase jitter spans the whole cycle so that windows
/// starting anywhere in a performance are recognized.
pub fn train_demo_model(seed: u64) -> Result<GestureNet> {
    let spec = GenSpec {
        stage: Stage::Demonstrated,
        participants: 4,
        clips_per_class_per_participant: 4,
        classes: DEMO_CLASSES.to_vec(),
        jitter: DEMO_JITTER,
        seed,
        ..GenSpec::default()
    };
    let (clips, _) = generate(&spec)?;
    let data = Examples::from_clips(&clips)?;
    let mut net = GestureNet::build(ModelConfig {
        seed,
        ..ModelConfig::default()
    })?;
    let opts = TrainOptions {
        epochs: 10,
        batch: 8,
        lr: 3e-3,
        seed,
        track_validation: false,
    };
    let report = train_fold(&mut net, &data, None, &opts)?;
    log::info!(
        "demo model: training accuracy {:.3} after {} epochs",
        report.train_accuracy.last().copied().unwrap_or(0.0),
        report.epochs_run
    );
    Ok(net)
}

/// Everything the demo observes on the bus.
#[derive(Default)]
struct Observed {
    predictions: Vec<PredictionEvent>,
    commands: u64,
    attention: Option<AttentionMessage>,
    state: Option<RobotStateMessage>,
}

impl Observed {
    fn drain(&mut self, client: &BusClient) -> Result<()> {
        while let Some(m) = client.try_recv()? {
            match m.topic.as_str() {
                topics::GESTURE_PREDICTION => self.predictions.push(serde_json::from_slice(&m.payload)?),
                topics::ROBOT_COMMAND => self.commands += 1,
                topics::SYSTEM_ATTENTION => self.attention = Some(serde_json::from_slice(&m.payload)?),
                topics::ROBOT_STATE => self.state = Some(serde_json::from_slice(&m.payload)?),
                _ => {}
            }
        }
        Ok(())
    }

    fn handled(&self) -> u64 {
        self.attention.as_ref().map_or(0, |a| a.handled)
    }

    /// Robot has seen every published action and finished moving.
    fn settled(&self) -> bool {
        self.state
            .as_ref()
            .is_some_and(|s| s.actions_received >= self.commands && !s.snapshot.busy)
    }
}

struct Camera<'a> {
    player: GesturePlayer,
    publisher: hiros_bus::Publisher,
    period: Duration,
    next: Instant,
    client: &'a BusClient,
}

impl Camera<'_> {
    /// Publishes one frame at the configured rate, then collects traffic.
    fn show(&mut self, class_id: usize, seen: &mut Observed) -> Result<()> {
        self.publisher
            .publish(topics::CAMERA_FRAMES, &self.player.next_payload(class_id))?;
        self.next += self.period;
        thread::sleep(self.next.saturating_duration_since(Instant::now()));
        seen.drain(self.client)
    }
}

pub fn run_demo(opts: DemoOptions) -> Result<DemoReport> {
    let start = Instant::now();
    let script = &opts.script;
    let plan: Vec<usize> = script.gestures.iter().map(GestureRef::resolve).collect::<Result<_>>()?;
    if script.fps.is_nan() || script.fps <= 0.0 {
        bail!("fps must be positive");
    }

    // Services, unless an external bus was given.
    let mut local = None;
    let mut services = Vec::new();
    let (bus, dims, cycle) = match opts.bus {
        Some(addr) => {
            let c = ModelConfig::default();
            (addr, (c.height, c.width, c.channels), c.frames)
        }
        None => {
            let server = serve_bus("127.0.0.1:0", Broker::default())?;
            let addr = server.addr();
            local = Some(server);
            let net = match opts.model.clone() {
                Some(n) => n,
                None => train_demo_model(opts.seed)?,
            };
            let c = net.config().clone();
            services.push(spawn_recognizer(addr, net, RecognizerOptions::default())?);
            services.push(spawn_protocol(addr)?);
            let mut robot = RobotOptions::new(demo_world());
            robot.speed = opts.robot_speed;
            services.push(spawn_robot(addr, robot)?);
            (addr, (c.height, c.width, c.channels), c.frames)
        }
    };

    let client = BusClient::connect_retry(bus, Duration::from_secs(10))?;
    for t in [
        topics::GESTURE_PREDICTION,
        topics::ROBOT_COMMAND,
        topics::SYSTEM_ATTENTION,
        topics::ROBOT_STATE,
    ] {
        client.subscribe(t)?;
    }
    let mut seen = Observed::default();
    let mut camera = Camera {
        player: GesturePlayer::new(
            FrameDims {
                height: dims.0,
                width: dims.1,
                channels: dims.2,
            },
            cycle,
            opts.seed,
        )
        .with_jitter(script.jitter),
        publisher: client.publisher(),
        period: Duration::from_secs_f64(1.0 / script.fps),
        next: Instant::now(),
        client: &client,
    };
    let mut report = DemoReport {
        steps: Vec::new(),
        stray_predictions: Vec::new(),
        final_state: None,
        attention: None,
        failures: Vec::new(),
        elapsed_s: 0.0,
    };

    // Let the services warm up on idle frames.
    for _ in 0..script.idle_frames {
        camera.show(hiros_core::dataset::DOING_NOTHING, &mut seen)?;
    }
    let settle = Duration::from_secs_f64(script.settle_timeout_s);
    'plan: for (k, &class_id) in plan.iter().enumerate() {
        let label = class_label(class_id).unwrap_or("?").to_owned();
        let first_frame = camera.player.frames_played();
        let mut recognized = None;
        seen.predictions.clear();
        for _ in 0..script.max_gesture_frames {
            camera.show(class_id, &mut seen)?;
            for p in seen.predictions.drain(..) {
                if p.class_id == class_id {
                    recognized = Some(p);
                } else if !is_background(p.class_id) {
                    report.stray_predictions.push(p);
                }
            }
            if recognized.is_some() {
                break;
            }
        }
        let frames = camera.player.frames_played() - first_frame;
        log::info!("demo step {k}: {label} recognized={}", recognized.is_some());
        let ok = recognized.is_some();
        report.steps.push(StepReport {
            class_id,
            label: label.clone(),
            recognized,
            frames,
        });
        if !ok {
            report
                .failures
                .push(format!("{label} not recognized within {} frames", script.max_gesture_frames));
            break 'plan;
        }
        // Idle until the command has been handled and the robot is still.
        let deadline = Instant::now() + settle;
        let mut idle = 0;
        while idle < script.idle_frames || seen.handled() < (k + 1) as u64 || !seen.settled() {
            if Instant::now() > deadline {
                report.failures.push(format!("robot did not settle after {label}"));
                break 'plan;
            }
            camera.show(hiros_core::dataset::DOING_NOTHING, &mut seen)?;
            idle += 1;
        }
    }
    report.stray_predictions.extend(seen.predictions.drain(..).filter(|p| !is_background(p.class_id)));

    report.final_state = seen.state.clone();
    report.attention = seen.attention.clone();
    check_expectation(&script.expect, &mut report);
    for s in services {
        let name = s.name();
        if let Err(e) = s.stop() {
            report.failures.push(format!("{name}: {e:#}"));
        }
    }
    drop(client);
    if let Some(server) = local {
        server.shutdown();
    }
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn check_expectation(expect: &Expectation, report: &mut DemoReport) {
    let Some(state) = &report.final_state else {
        report.failures.push("no robot state received".into());
        return;
    };
    let s = &state.snapshot;
    let (dx, dy) = (s.pose.x - expect.base[0], s.pose.y - expect.base[1]);
    if dx.abs() > expect.tolerance || dy.abs() > expect.tolerance {
        report.failures.push(format!(
            "base at ({}, {}), expected ({}, {}) ±{}",
            s.pose.x, s.pose.y, expect.base[0], expect.base[1], expect.tolerance
        ));
    }
    if expect.object_at_handover {
        let o = s.world.object;
        let h = s.world.handover;
        if s.world.object_held || (o[0] - h[0]).abs() > expect.tolerance || (o[1] - h[1]).abs() > expect.tolerance {
            report
                .failures
                .push(format!("object at {o:?} (held: {}), handover pose {h:?}", s.world.object_held));
        }
    }
    match &report.attention {
        Some(a) if a.state.attention == expect.attention => {}
        Some(a) => report
            .failures
            .push(format!("attention {:?}, expected {:?}", a.state.attention, expect.attention)),
        None => report.failures.push("no attention state received".into()),
    }
}
