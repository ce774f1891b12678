//! The closed action vocabulary shared by the day and night sides.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One of the four things the robot can do in a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionId {
    Forward,
    TurnLeft,
    TurnRight,
    Stay,
}

impl ActionId {
    /// All actions, in their canonical (serialization and tie-break) order.
    pub const ALL: [ActionId; 4] = [
        ActionId::Forward,
        ActionId::TurnLeft,
        ActionId::TurnRight,
        ActionId::Stay,
    ];

    /// Stable index into [`ActionId::ALL`].
    pub fn index(self) -> usize {
        match self {
            ActionId::Forward => 0,
            ActionId::TurnLeft => 1,
            ActionId::TurnRight => 2,
            ActionId::Stay => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionId::Forward => "forward",
            ActionId::TurnLeft => "turn_left",
            ActionId::TurnRight => "turn_right",
            ActionId::Stay => "stay",
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ActionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(ActionId::Forward),
            "turn_left" => Ok(ActionId::TurnLeft),
            "turn_right" => Ok(ActionId::TurnRight),
            "stay" => Ok(ActionId::Stay),
            other => Err(format!("unknown action id: {other:?}")),
        }
    }
}
