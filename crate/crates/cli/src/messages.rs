//! JSON payloads exchanged between services.

use hiros_core::protocol::{Command, ControlState};
use hiros_core::robotsim::Snapshot;
use serde::{Deserialize, Serialize};

/// Published on `system/attention` after every handled command, and once at
/// startup with `handled == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMessage {
    #[serde(flatten)]
    pub state: ControlState,
    pub command: Option<Command>,
    /// Commands processed so far.
    pub handled: u64,
}

/// Published on `robot/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStateMessage {
    #[serde(flatten)]
    pub snapshot: Snapshot,
    /// Actions read from `robot/command`, accepted or not.
    pub actions_received: u64,
    pub actions_rejected: u64,
}

/// Request on `camera/inject` to play a synthetic performance of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectRequest {
    pub class_id: usize,
    /// Gesture frames to play before returning to idle.
    #[serde(default)]
    pub frames: Option<usize>,
}

/// Published on `gesture/probs` for every classified window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbsMessage {
    pub window: u64,
    pub ts_ms: u64,
    pub probs: Vec<f64>,
}

/// Topic carrying per-window class probabilities.
pub const GESTURE_PROBS: &str = "gesture/probs";

#[cfg(test)]
mod tests {
    use super::*;
    use hiros_core::protocol::{Attention, Mode};
    use hiros_core::robotsim::{demo_world, Robot, SimConfig};

    #[test]
    fn state_message_flattens_the_snapshot() {
        let m = RobotStateMessage {
            snapshot: Robot::new(SimConfig::default(), demo_world()).snapshot(),
            actions_received: 2,
            actions_rejected: 1,
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["pose", "arm", "world", "busy", "last_event", "tick", "actions_received"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: RobotStateMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn attention_message_shape() {
        let m = AttentionMessage {
            state: ControlState {
                attention: Attention::Paused,
                mode: Mode::BaseNav,
                pending_target: None,
            },
            command: Some(Command::Pause),
            handled: 3,
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["attention"], "PAUSED");
        assert_eq!(v["mode"], "BASE_NAV");
        assert_eq!(serde_json::from_value::<AttentionMessage>(v).unwrap(), m);
        let r: InjectRequest = serde_json::from_str(r#"{"class_id":4}"#).unwrap();
        assert_eq!(r.frames, None);
    }
}
