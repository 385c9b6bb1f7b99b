use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 27;
pub const DOING_NOTHING: usize = 25;
pub const DOING_SOMETHING_ELSE: usize = 26;

const LABELS: [&str; NUM_CLASSES] = [
    "Start",
    "Stop",
    "Handwave",
    "Resume",
    "Pause",
    "Agree",
    "Disagree",
    "Repeat",
    "Undo",
    "Point to an Object",
    "Point to an Area",
    "I will Follow You",
    "Follow Me",
    "Watch Me",
    "Watch Out",
    "Speed up",
    "Slow down",
    "Thumbs up",
    "Thumbs down",
    "Give me an item",
    "Receive an item",
    "Move backwards",
    "Come forward",
    "Move to the left",
    "Move to the right",
    "Doing nothing",
    "Doing something else",
];

/// Commands dropped from the deployed recognizer for low recall.
pub const LOW_RECALL_COMMANDS: [usize; 5] = [20, 19, 15, 16, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Command,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GestureClass {
    pub id: usize,
    pub label: &'static str,
    pub kind: ClassKind,
}

impl GestureClass {
    pub fn is_background(&self) -> bool {
        self.kind == ClassKind::Background
    }
}

pub fn class_table() -> [GestureClass; NUM_CLASSES] {
    std::array::from_fn(|id| GestureClass {
        id,
        label: LABELS[id],
        kind: if id >= DOING_NOTHING {
            ClassKind::Background
        } else {
            ClassKind::Command
        },
    })
}

pub fn class_label(id: usize) -> Option<&'static str> {
    LABELS.get(id).copied()
}

pub fn is_background(id: usize) -> bool {
    id == DOING_NOTHING || id == DOING_SOMETHING_ELSE
}

/// Case-insensitive lookup by label.
pub fn class_by_label(label: &str) -> Option<usize> {
    LABELS.iter().position(|l| l.eq_ignore_ascii_case(label.trim()))
}
