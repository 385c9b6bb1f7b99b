//! Bus-connected services: recognizer, protocol and robot simulator.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use hiros_bus::{topics, BusClient, Message, Publisher};
use hiros_core::dataset::decode_frame;
use hiros_core::dataset::motion::FrameDims;
use hiros_core::model::GestureNet;
use hiros_core::protocol::{map_prediction, step, ControlState, RobotAction};
use hiros_core::robotsim::{Robot, SimConfig, World};
use hiros_core::stream::{PredictionEvent, Recognizer, SmootherConfig};

use crate::messages::{AttentionMessage, InjectRequest, ProbsMessage, RobotStateMessage, GESTURE_PROBS};
use crate::player::GesturePlayer;

const POLL: Duration = Duration::from_millis(50);
const CONNECT_WAIT: Duration = Duration::from_secs(10);
/// Unchanged control state is re-announced this often for late joiners.
const ATTENTION_HEARTBEAT: Duration = Duration::from_secs(1);

/// A service running on its own thread until stopped.
pub struct ServiceHandle {
    name: &'static str,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<Result<()>>,
}

impl ServiceHandle {
    fn spawn(name: &'static str, body: impl FnOnce(Arc<AtomicBool>) -> Result<()> + Send + 'static) -> Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::Builder::new().name(name.into()).spawn(move || body(flag))?;
        Ok(ServiceHandle { name, stop, thread })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn is_finished(&self) -> bool {
        self.thread.is_finished()
    }

    /// Signals the service and waits for it.
    pub fn stop(self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    pub fn join(self) -> Result<()> {
        match self.thread.join() {
            Ok(r) => r.with_context(|| format!("{} service failed", self.name)),
            Err(_) => bail!("{} service panicked", self.name),
        }
    }
}

fn connect(bus: SocketAddr, subscriptions: &[&str]) -> Result<BusClient> {
    let client =
        BusClient::connect_retry(bus, CONNECT_WAIT).with_context(|| format!("cannot reach the bus at {bus}"))?;
    for t in subscriptions {
        client.subscribe(t)?;
    }
    Ok(client)
}

fn publish_json(p: &Publisher, topic: &str, value: &impl serde::Serialize) -> Result<()> {
    p.publish(topic, &serde_json::to_vec(value)?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RecognizerOptions {
    pub smoother: SmootherConfig,
    /// Classes never emitted as commands.
    pub suppressed: Vec<usize>,
    /// Pacing and length of `camera/inject` performances.
    pub inject_fps: f64,
    pub inject_frames: usize,
    pub inject_idle_frames: usize,
    pub seed: u64,
}

impl Default for RecognizerOptions {
    fn default() -> Self {
        RecognizerOptions {
            smoother: SmootherConfig::default(),
            suppressed: Vec::new(),
            inject_fps: 30.0,
            inject_frames: 48,
            inject_idle_frames: 32,
            seed: 0,
        }
    }
}

/// Classifies `camera/frames` and publishes `gesture/prediction` events and
/// `gesture/probs` rows. Requests on `camera/inject` are rendered by a
/// built-in player and fed back into `camera/frames`.
pub fn spawn_recognizer(bus: SocketAddr, net: GestureNet, opts: RecognizerOptions) -> Result<ServiceHandle> {
    let mut recognizer = Recognizer::new(net, opts.smoother, opts.suppressed.iter().copied())?;
    let c = recognizer.net().config().clone();
    let dims = FrameDims {
        height: c.height,
        width: c.width,
        channels: c.channels,
    };
    let client = connect(bus, &[topics::CAMERA_FRAMES, topics::CAMERA_INJECT])?;
    ServiceHandle::spawn("recognizer", move |stop| {
        let publisher = client.publisher();
        let (inject_tx, inject_rx) = mpsc::channel::<InjectRequest>();
        let player_pub = client.publisher();
        let player_stop = stop.clone();
        let player_opts = opts.clone();
        let player = thread::Builder::new().name("inject-player".into()).spawn(move || {
            run_inject_player(
                &player_pub,
                GesturePlayer::new(dims, c.frames, player_opts.seed),
                &inject_rx,
                &player_opts,
                &player_stop,
            )
        })?;
        let start = Instant::now();
        let mut bad_frames = 0u64;
        while !stop.load(Ordering::SeqCst) {
            let Some(Message { topic, payload }) = client.recv_timeout(POLL)? else {
                continue;
            };
            if topic == topics::CAMERA_INJECT {
                match serde_json::from_slice::<InjectRequest>(&payload) {
                    Ok(r) if r.class_id < c.num_classes => {
                        let _ = inject_tx.send(r);
                    }
                    Ok(r) => log::warn!("inject: class {} out of range", r.class_id),
                    Err(e) => log::warn!("inject: bad request: {e}"),
                }
                continue;
            }
            let frame = match decode_frame(&payload) {
                Ok(f) if (f.height, f.width, f.channels) == (dims.height, dims.width, dims.channels) => f,
                Ok(f) => {
                    bad_frames += 1;
                    log::warn!(
                        "frame {}x{}x{} does not match the model's {}x{}x{}",
                        f.height,
                        f.width,
                        f.channels,
                        dims.height,
                        dims.width,
                        dims.channels
                    );
                    continue;
                }
                Err(e) => {
                    bad_frames += 1;
                    log::warn!("undecodable frame: {e}");
                    continue;
                }
            };
            let ts_ms = start.elapsed().as_millis() as u64;
            if let Some(w) = recognizer.observe_frame(&frame.pixels, ts_ms)? {
                publish_json(
                    &publisher,
                    GESTURE_PROBS,
                    &ProbsMessage {
                        window: w.window,
                        ts_ms,
                        probs: w.probs,
                    },
                )?;
                if let Some(event) = w.event {
                    log::info!("prediction {} ({:.2}) at window {}", event.label, event.prob, event.window);
                    publish_json(&publisher, topics::GESTURE_PREDICTION, &event)?;
                }
            }
        }
        drop(inject_tx);
        let _ = player.join();
        log::info!("recognizer: {} windows, {bad_frames} rejected frames", recognizer.inferences());
        Ok(())
    })
}

fn run_inject_player(
    publisher: &Publisher,
    mut player: GesturePlayer,
    requests: &mpsc::Receiver<InjectRequest>,
    opts: &RecognizerOptions,
    stop: &AtomicBool,
) {
    let period = Duration::from_secs_f64(1.0 / opts.inject_fps.max(1.0));
    while !stop.load(Ordering::SeqCst) {
        let req = match requests.recv_timeout(POLL) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => continue,
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
        };
        let n = req.frames.unwrap_or(opts.inject_frames);
        let plan = std::iter::repeat_n(req.class_id, n).chain(std::iter::repeat_n(
            hiros_core::dataset::DOING_NOTHING,
            opts.inject_idle_frames,
        ));
        let mut next = Instant::now();
        for class in plan {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            if publisher.publish(topics::CAMERA_FRAMES, &player.next_payload(class)).is_err() {
                return;
            }
            next += period;
            thread::sleep(next.saturating_duration_since(Instant::now()));
        }
    }
}

/// Maps `gesture/prediction` through the control state machine, publishing
/// actions on `robot/command` and the control state on `system/attention`
/// (after every command, and periodically while idle).
pub fn spawn_protocol(bus: SocketAddr) -> Result<ServiceHandle> {
    let client = connect(bus, &[topics::GESTURE_PREDICTION])?;
    ServiceHandle::spawn("protocol", move |stop| {
        let publisher = client.publisher();
        let mut state = ControlState::default();
        let mut handled = 0u64;
        let announce = |state: ControlState, command, handled| {
            publish_json(
                &publisher,
                topics::SYSTEM_ATTENTION,
                &AttentionMessage {
                    state,
                    command,
                    handled,
                },
            )
        };
        announce(state, None, 0)?;
        let mut last_announce = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            if last_announce.elapsed() >= ATTENTION_HEARTBEAT {
                announce(state, None, handled)?;
                last_announce = Instant::now();
            }
            let Some(m) = client.recv_timeout(POLL)? else {
                continue;
            };
            let event: PredictionEvent = match serde_json::from_slice(&m.payload) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("protocol: bad prediction payload: {e}");
                    continue;
                }
            };
            let cmd = match map_prediction(&event) {
                Ok(Some(c)) => c,
                Ok(None) => continue,
                Err(e) => {
                    log::warn!("protocol: {e}");
                    continue;
                }
            };
            let t = step(state, cmd);
            if t.actions.is_empty() && t.state == state {
                log::info!("protocol: {cmd:?} has no effect in {:?}/{:?}", state.attention, state.mode);
            }
            for a in t.actions.iter().filter(|a| **a != RobotAction::None) {
                publish_json(&publisher, topics::ROBOT_COMMAND, a)?;
            }
            state = t.state;
            handled += 1;
            announce(state, Some(cmd), handled)?;
            last_announce = Instant::now();
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RobotOptions {
    pub sim: SimConfig,
    pub world: World,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// State publications per simulated second.
    pub state_hz: f64,
}

impl RobotOptions {
    pub fn new(world: World) -> Self {
        RobotOptions {
            sim: SimConfig::default(),
            world,
            speed: 1.0,
            state_hz: 10.0,
        }
    }
}

/// Executes `robot/command` actions in the simulator and publishes
/// `robot/state`.
pub fn spawn_robot(bus: SocketAddr, opts: RobotOptions) -> Result<ServiceHandle> {
    if !(opts.speed > 0.0 && opts.state_hz > 0.0) {
        bail!("robot speed and state rate must be positive");
    }
    let client = connect(bus, &[topics::ROBOT_COMMAND])?;
    ServiceHandle::spawn("robot", move |stop| {
        let publisher = client.publisher();
        let mut robot = Robot::new(opts.sim, opts.world);
        let ticks_per_state = ((1.0 / opts.state_hz) / opts.sim.dt).round().max(1.0) as u64;
        let period = Duration::from_secs_f64(opts.sim.dt / opts.speed);
        let (mut received, mut rejected) = (0u64, 0u64);
        let mut next = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            while let Some(m) = client.try_recv()? {
                let action: RobotAction = match serde_json::from_slice(&m.payload) {
                    Ok(a) => a,
                    Err(e) => {
                        log::warn!("robot: bad command payload: {e}");
                        continue;
                    }
                };
                received += 1;
                match robot.apply(action) {
                    Ok(events) => events.iter().for_each(|e| log::info!("robot: {e:?}")),
                    Err(e) => {
                        rejected += 1;
                        log::warn!("robot: {e}");
                    }
                }
            }
            for e in robot.step() {
                log::info!("robot: {e:?}");
            }
            if robot.snapshot().tick.is_multiple_of(ticks_per_state) {
                publish_json(
                    &publisher,
                    topics::ROBOT_STATE,
                    &RobotStateMessage {
                        snapshot: robot.snapshot(),
                        actions_received: received,
                        actions_rejected: rejected,
                    },
                )?;
            }
            next += period;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else {
                next = now;
            }
        }
        Ok(())
    })
}
