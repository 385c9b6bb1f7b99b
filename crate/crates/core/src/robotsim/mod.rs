//! Planar mobile manipulator simulation.
//!
//! The base translates in its own frame. The arm is a symbolic posture plus
//! an end-effector offset added to a fixed reach point in the robot frame;
//! at `HOME` the end effector is tucked and the offset is zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Direction, RobotAction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub base_step: f64,
    pub base_speed: f64,
    pub arm_step: f64,
    pub arm_speed: f64,
    pub grasp_tolerance: f64,
    /// End-effector position in the robot frame at zero offset.
    pub arm_reach: [f64; 2],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            base_step: 0.25,
            base_speed: 0.25,
            arm_step: crate::protocol::ARM_ADJUST_M,
            arm_speed: 0.1,
            grasp_tolerance: 0.05,
            arm_reach: [0.6, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-π, π]`.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Posture {
    Home,
    Extended,
    Grasping,
    Handover,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub posture: Posture,
    /// Robot frame, metres.
    pub ee_offset: [f64; 2],
    pub gripper_open: bool,
    pub holding_object: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct World {
    /// World frame. Follows the end effector while held.
    pub object: [f64; 2],
    pub object_held: bool,
    pub handover: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimEvent {
    TaskDone,
    Failed { reason: String },
    Busy { rejected: RobotAction },
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("robot busy, rejected {0:?}")]
    Busy(RobotAction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub pose: BasePose,
    pub arm: ArmState,
    pub world: World,
    pub busy: bool,
    pub last_event: Option<SimEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MotionKind {
    Base,
    Arm,
    Carry,
}

/// Linear interpolation of a 2-vector over a whole number of ticks; the last
/// tick lands exactly on `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    kind: MotionKind,
    from: [f64; 2],
    to: [f64; 2],
    ticks: u64,
    done: u64,
}

impl Motion {
    fn new(kind: MotionKind, from: [f64; 2], to: [f64; 2], speed: f64, dt: f64) -> Self {
        let dist = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
        let ticks = ((dist / (speed * dt)) - 1e-9).ceil().max(1.0) as u64;
        Motion {
            kind,
            from,
            to,
            ticks,
            done: 0,
        }
    }

    fn advance(&mut self) -> [f64; 2] {
        self.done += 1;
        if self.done >= self.ticks {
            return self.to;
        }
        let f = self.done as f64 / self.ticks as f64;
        [
            self.from[0] + f * (self.to[0] - self.from[0]),
            self.from[1] + f * (self.to[1] - self.from[1]),
        ]
    }

    fn finished(&self) -> bool {
        self.done >= self.ticks
    }
}

pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone)]
pub struct Robot {
    config: SimConfig,
    pose: BasePose,
    arm: ArmState,
    world: World,
    motion: Option<Motion>,
    tick: u64,
    last_event: Option<SimEvent>,
}

impl Robot {
    pub fn new(config: SimConfig, world: World) -> Self {
        Robot {
            config,
            pose: BasePose {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
            },
            arm: ArmState {
                posture: Posture::Home,
                ee_offset: [0.0, 0.0],
                gripper_open: true,
                holding_object: false,
            },
            world,
            motion: None,
            tick: 0,
            last_event: None,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn is_busy(&self) -> bool {
        self.motion.is_some()
    }

    fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.pose.theta.sin_cos();
        [self.pose.x + c * p[0] - s * p[1], self.pose.y + s * p[0] + c * p[1]]
    }

    fn to_robot(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.pose.theta.sin_cos();
        let (dx, dy) = (p[0] - self.pose.x, p[1] - self.pose.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// End effector in the world frame. At `HOME` this is the base position.
    pub fn end_effector(&self) -> [f64; 2] {
        if self.arm.posture == Posture::Home {
            return [self.pose.x, self.pose.y];
        }
        let r = self.config.arm_reach;
        self.to_world([r[0] + self.arm.ee_offset[0], r[1] + self.arm.ee_offset[1]])
    }

    /// End effector at the reach point plus offset, regardless of posture.
    fn reach_point(&self) -> [f64; 2] {
        let r = self.config.arm_reach;
        self.to_world([r[0] + self.arm.ee_offset[0], r[1] + self.arm.ee_offset[1]])
    }

    fn sync_held_object(&mut self) {
        if self.world.object_held {
            self.world.object = self.end_effector();
        }
    }

    fn emit(&mut self, e: SimEvent, out: &mut Vec<SimEvent>) {
        self.last_event = Some(e.clone());
        out.push(e);
    }

    /// Starts an action. Rejected without side effects on the schedule while
    /// a motion is in progress.
    pub fn apply(&mut self, action: RobotAction) -> Result<Vec<SimEvent>, SimError> {
        let mut events = Vec::new();
        if self.is_busy() {
            self.last_event = Some(SimEvent::Busy { rejected: action });
            return Err(SimError::Busy(action));
        }
        let c = self.config;
        match action {
            RobotAction::None => {}
            RobotAction::BaseStep { dir } => {
                let d = dir.unit();
                let from = [self.pose.x, self.pose.y];
                let to = self.to_world([c.base_step * d[0], c.base_step * d[1]]);
                self.motion = Some(Motion::new(MotionKind::Base, from, to, c.base_speed, c.dt));
            }
            RobotAction::ArmAdjust { dir } => {
                let d = dir.unit();
                let from = self.arm.ee_offset;
                let to = [from[0] + c.arm_step * d[0], from[1] + c.arm_step * d[1]];
                if !self.arm.holding_object {
                    self.arm.posture = Posture::Extended;
                }
                self.motion = Some(Motion::new(MotionKind::Arm, from, to, c.arm_speed, c.dt));
            }
            RobotAction::ExecuteGraspHandover => {
                let ee = self.reach_point();
                let o = self.world.object;
                let dist = ((ee[0] - o[0]).powi(2) + (ee[1] - o[1]).powi(2)).sqrt();
                if self.world.object_held {
                    self.emit(
                        SimEvent::Failed {
                            reason: "already holding the object".into(),
                        },
                        &mut events,
                    );
                } else if dist > c.grasp_tolerance {
                    self.emit(
                        SimEvent::Failed {
                            reason: format!("end effector {dist:.3} m from object"),
                        },
                        &mut events,
                    );
                } else {
                    self.arm.posture = Posture::Grasping;
                    self.arm.gripper_open = false;
                    self.arm.holding_object = true;
                    self.world.object_held = true;
                    self.sync_held_object();
                    let from = self.arm.ee_offset;
                    let target = self.to_robot(self.world.handover);
                    let to = [target[0] - c.arm_reach[0], target[1] - c.arm_reach[1]];
                    self.motion = Some(Motion::new(MotionKind::Carry, from, to, c.arm_speed, c.dt));
                }
            }
            RobotAction::ArmReset => {
                // A held object is left where the gripper was.
                self.world.object_held = false;
                self.arm = ArmState {
                    posture: Posture::Home,
                    ee_offset: [0.0, 0.0],
                    gripper_open: true,
                    holding_object: false,
                };
            }
        }
        Ok(events)
    }

    /// Advances the simulation by one `dt`.
    pub fn step(&mut self) -> Vec<SimEvent> {
        self.tick += 1;
        let mut events = Vec::new();
        let Some(mut m) = self.motion.take() else {
            return events;
        };
        let p = m.advance();
        match m.kind {
            MotionKind::Base => {
                self.pose.x = p[0];
                self.pose.y = p[1];
            }
            MotionKind::Arm | MotionKind::Carry => self.arm.ee_offset = p,
        }
        self.sync_held_object();
        if !m.finished() {
            self.motion = Some(m);
        } else if m.kind == MotionKind::Carry {
            self.arm.posture = Posture::Handover;
            self.arm.gripper_open = true;
            self.arm.holding_object = false;
            self.world.object_held = false;
            self.world.object = self.world.handover;
            self.emit(SimEvent::TaskDone, &mut events);
        }
        self.pose.theta = normalize_angle(self.pose.theta);
        events
    }

    /// Steps until idle or `max_ticks` elapse.
    pub fn run_until_idle(&mut self, max_ticks: u64) -> Vec<SimEvent> {
        let mut events = Vec::new();
        for _ in 0..max_ticks {
            if !self.is_busy() {
                break;
            }
            events.extend(self.step());
        }
        events
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            pose: self.pose,
            arm: self.arm,
            world: self.world,
            busy: self.is_busy(),
            last_event: self.last_event.clone(),
        }
    }
}

/// Scene used by the end-to-end demo: after one forward and one rightward
/// base step, one leftward arm adjustment puts the end effector on the
/// object.
pub fn demo_world() -> World {
    World {
        object: [0.85, -0.20],
        object_held: false,
        handover: [0.45, 0.0],
    }
}

/// Direction used by the demo's arm adjustment.
pub const DEMO_ADJUST: Direction = Direction::Left;

#[cfg(test)]
mod tests {
    use super::*;

    fn robot() -> Robot {
        Robot::new(SimConfig::default(), demo_world())
    }

    #[test]
    fn base_step_takes_twenty_ticks() {
        let mut r = robot();
        r.apply(RobotAction::BaseStep { dir: Direction::Forward }).unwrap();
        for _ in 0..19 {
            r.step();
            assert!(r.is_busy());
        }
        r.step();
        assert!(!r.is_busy());
        let s = r.snapshot();
        assert_eq!((s.pose.x, s.pose.y), (0.25, 0.0));
    }

    #[test]
    fn busy_rejection_keeps_schedule() {
        let mut r = robot();
        r.apply(RobotAction::BaseStep { dir: Direction::Right }).unwrap();
        r.step();
        let before = r.motion;
        assert_eq!(
            r.apply(RobotAction::ArmReset),
            Err(SimError::Busy(RobotAction::ArmReset))
        );
        assert_eq!(r.motion, before);
        assert!(matches!(r.snapshot().last_event, Some(SimEvent::Busy { .. })));
        r.run_until_idle(100);
        assert_eq!(r.snapshot().pose.y, -0.25);
    }

    #[test]
    fn grasp_out_of_tolerance_fails() {
        let mut r = robot();
        let ev = r.apply(RobotAction::ExecuteGraspHandover).unwrap();
        assert!(matches!(ev.as_slice(), [SimEvent::Failed { .. }]));
        assert!(!r.is_busy());
        assert!(!r.snapshot().world.object_held);
    }

    #[test]
    fn scripted_grasp_and_handover() {
        let mut r = robot();
        for a in [
            RobotAction::BaseStep { dir: Direction::Forward },
            RobotAction::BaseStep { dir: Direction::Right },
            RobotAction::ArmAdjust { dir: DEMO_ADJUST },
        ] {
            r.apply(a).unwrap();
            r.run_until_idle(1000);
        }
        let ee = r.end_effector();
        assert!((ee[0] - 0.85).abs() < 1e-12 && (ee[1] + 0.20).abs() < 1e-12);
        r.apply(RobotAction::ExecuteGraspHandover).unwrap();
        assert!(r.snapshot().arm.holding_object);
        let mut events = Vec::new();
        while r.is_busy() {
            events.extend(r.step());
            let s = r.snapshot();
            assert_eq!(s.arm.holding_object, s.world.object_held);
            if s.world.object_held {
                assert_eq!(s.world.object, r.end_effector());
            }
        }
        assert_eq!(events, vec![SimEvent::TaskDone]);
        let s = r.snapshot();
        assert_eq!(s.arm.posture, Posture::Handover);
        assert_eq!(s.world.object, [0.45, 0.0]);
        assert!(!s.world.object_held && s.arm.gripper_open);
        r.apply(RobotAction::ArmReset).unwrap();
        let s = r.snapshot();
        assert_eq!(s.arm.posture, Posture::Home);
        assert_eq!(s.arm.ee_offset, [0.0, 0.0]);
        assert_eq!(s.world.object, [0.45, 0.0]);
    }

    #[test]
    fn snapshot_json_round_trip() {
        let mut r = robot();
        r.apply(RobotAction::BaseStep { dir: Direction::Left }).unwrap();
        r.step();
        let s = r.snapshot();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Snapshot>(&json).unwrap(), s);
        let fresh = robot().snapshot();
        assert_eq!(fresh.arm.posture, Posture::Home);
        assert_eq!((fresh.pose.x, fresh.pose.y, fresh.pose.theta), (0.0, 0.0, 0.0));
        assert!(!fresh.busy);
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
