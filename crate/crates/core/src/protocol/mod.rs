//! Gesture commands and the attention-gated control state machine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{is_background, LOW_RECALL_COMMANDS, NUM_CLASSES};
use crate::stream::PredictionEvent;

/// Planar offset added to the pending arm target per directional command.
pub const ARM_ADJUST_M: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("unknown class id {0}")]
    UnknownClass(usize),
}

/// The 25 command gestures, discriminants equal to their class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Start = 0,
    Stop,
    Handwave,
    Resume,
    Pause,
    Agree,
    Disagree,
    Repeat,
    Undo,
    PointToObject,
    PointToArea,
    IWillFollowYou,
    FollowMe,
    WatchMe,
    WatchOut,
    SpeedUp,
    SlowDown,
    ThumbsUp,
    ThumbsDown,
    GiveMeAnItem,
    ReceiveAnItem,
    MoveBackwards,
    ComeForward,
    MoveToTheLeft,
    MoveToTheRight,
}

impl Command {
    pub const ALL: [Command; 25] = [
        Command::Start,
        Command::Stop,
        Command::Handwave,
        Command::Resume,
        Command::Pause,
        Command::Agree,
        Command::Disagree,
        Command::Repeat,
        Command::Undo,
        Command::PointToObject,
        Command::PointToArea,
        Command::IWillFollowYou,
        Command::FollowMe,
        Command::WatchMe,
        Command::WatchOut,
        Command::SpeedUp,
        Command::SlowDown,
        Command::ThumbsUp,
        Command::ThumbsDown,
        Command::GiveMeAnItem,
        Command::ReceiveAnItem,
        Command::MoveBackwards,
        Command::ComeForward,
        Command::MoveToTheLeft,
        Command::MoveToTheRight,
    ];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Option<Command> {
        Command::ALL.get(id).copied()
    }

    pub fn label(self) -> &'static str {
        crate::dataset::class_label(self.class_id()).expect("command ids are class ids")
    }

    /// Dropped from the deployed recognizer for low recall. Still mappable.
    pub fn is_deprecated(self) -> bool {
        LOW_RECALL_COMMANDS.contains(&self.class_id())
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Command::ComeForward => Some(Direction::Forward),
            Command::MoveBackwards => Some(Direction::Backward),
            Command::MoveToTheLeft => Some(Direction::Left),
            Command::MoveToTheRight => Some(Direction::Right),
            _ => None,
        }
    }
}

/// Background classes yield `None`.
pub fn map_prediction(event: &PredictionEvent) -> Result<Option<Command>, ProtocolError> {
    map_class(event.class_id)
}

pub fn map_class(class_id: usize) -> Result<Option<Command>, ProtocolError> {
    if class_id >= NUM_CLASSES {
        return Err(ProtocolError::UnknownClass(class_id));
    }
    if is_background(class_id) {
        return Ok(None);
    }
    Ok(Command::from_class_id(class_id))
}

/// Robot frame: forward is +x, left is +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Left,
    Right,
}

impl Direction {
    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Forward => [1.0, 0.0],
            Direction::Backward => [-1.0, 0.0],
            Direction::Left => [0.0, 1.0],
            Direction::Right => [0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Attention {
    Active,
    Paused,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    BaseNav,
    ArmTargeting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub attention: Attention,
    pub mode: Mode,
    /// Accumulated arm adjustment while targeting.
    pub pending_target: Option<[f64; 2]>,
}

impl Default for ControlState {
    fn default() -> Self {
        ControlState {
            attention: Attention::Active,
            mode: Mode::Idle,
            pending_target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RobotAction {
    BaseStep { dir: Direction },
    ArmAdjust { dir: Direction },
    ExecuteGraspHandover,
    ArmReset,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: ControlState,
    /// Empty when the command has no effect on the robot.
    pub actions: Vec<RobotAction>,
}

/// The control transition table. Total and pure.
pub fn step(state: ControlState, cmd: Command) -> Transition {
    let same = |s: ControlState| Transition { state: s, actions: vec![] };
    let with = |s: ControlState, a: RobotAction| Transition {
        state: s,
        actions: vec![a],
    };
    match state.attention {
        Attention::Shutdown => same(state),
        Attention::Paused => match cmd {
            Command::Resume => same(ControlState {
                attention: Attention::Active,
                ..state
            }),
            Command::Stop => same(shutdown()),
            _ => same(state),
        },
        Attention::Active => match cmd {
            Command::Pause => same(ControlState {
                attention: Attention::Paused,
                ..state
            }),
            Command::Stop => same(shutdown()),
            Command::Start => same(ControlState {
                mode: Mode::BaseNav,
                pending_target: None,
                ..state
            }),
            Command::PointToObject => same(ControlState {
                mode: Mode::ArmTargeting,
                pending_target: Some([0.0, 0.0]),
                ..state
            }),
            Command::Resume if state.mode == Mode::ArmTargeting => with(
                ControlState {
                    mode: Mode::Idle,
                    pending_target: None,
                    ..state
                },
                RobotAction::ExecuteGraspHandover,
            ),
            Command::Undo => with(
                ControlState {
                    mode: Mode::Idle,
                    pending_target: None,
                    ..state
                },
                RobotAction::ArmReset,
            ),
            c => match (c.direction(), state.mode) {
                (Some(dir), Mode::BaseNav) => with(state, RobotAction::BaseStep { dir }),
                (Some(dir), Mode::ArmTargeting) => {
                    let [x, y] = state.pending_target.unwrap_or([0.0, 0.0]);
                    let [ux, uy] = dir.unit();
                    with(
                        ControlState {
                            pending_target: Some([x + ARM_ADJUST_M * ux, y + ARM_ADJUST_M * uy]),
                            ..state
                        },
                        RobotAction::ArmAdjust { dir },
                    )
                }
                _ => {
                    log::info!("{} has no robot behaviour in mode {:?}", c.label(), state.mode);
                    same(state)
                }
            },
        },
    }
}

fn shutdown() -> ControlState {
    ControlState {
        attention: Attention::Shutdown,
        mode: Mode::Idle,
        pending_target: None,
    }
}
