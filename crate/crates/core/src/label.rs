use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six drone directions plus the inference-only `Unknown` outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CommandLabel {
    Up,
    Down,
    Forward,
    Backward,
    Right,
    Left,
    Unknown,
}

impl CommandLabel {
    pub const COMMANDS: [CommandLabel; 6] = [
        CommandLabel::Up,
        CommandLabel::Down,
        CommandLabel::Forward,
        CommandLabel::Backward,
        CommandLabel::Right,
        CommandLabel::Left,
    ];

    pub const ALL: [CommandLabel; 7] = [
        CommandLabel::Up,
        CommandLabel::Down,
        CommandLabel::Forward,
        CommandLabel::Backward,
        CommandLabel::Right,
        CommandLabel::Left,
        CommandLabel::Unknown,
    ];

    /// Class index in `0..6`; `None` for `Unknown`.
    pub fn index(self) -> Option<usize> {
        Self::COMMANDS.iter().position(|&c| c == self)
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::COMMANDS
            .get(index)
            .copied()
            .ok_or(Error::LabelOutOfRange { index, classes: 6 })
    }

    pub fn name(self) -> &'static str {
        match self {
            CommandLabel::Up => "UP",
            CommandLabel::Down => "DOWN",
            CommandLabel::Forward => "FORWARD",
            CommandLabel::Backward => "BACKWARD",
            CommandLabel::Right => "RIGHT",
            CommandLabel::Left => "LEFT",
            CommandLabel::Unknown => "UNKNOWN",
        }
    }

    pub fn is_command(self) -> bool {
        self != CommandLabel::Unknown
    }
}

impl fmt::Display for CommandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CommandLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown command label `{s}`")))
    }
}

/// What a pipeline decided: one of the built-in labels or an enrolled
/// custom command name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DecisionLabel {
    Builtin(CommandLabel),
    Custom(String),
}

impl DecisionLabel {
    pub const UNKNOWN: DecisionLabel = DecisionLabel::Builtin(CommandLabel::Unknown);

    /// Parses a store/wire name: built-in names map to their label, anything
    /// else becomes a custom command.
    pub fn from_name(name: &str) -> Self {
        match name.parse::<CommandLabel>() {
            Ok(l) => DecisionLabel::Builtin(l),
            Err(_) => DecisionLabel::Custom(name.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DecisionLabel::Builtin(l) => l.name(),
            DecisionLabel::Custom(s) => s,
        }
    }

    pub fn is_unknown(&self) -> bool {
        *self == Self::UNKNOWN
    }

    /// The built-in label, or `Unknown` for custom commands.
    pub fn builtin(&self) -> CommandLabel {
        match self {
            DecisionLabel::Builtin(l) => *l,
            DecisionLabel::Custom(_) => CommandLabel::Unknown,
        }
    }
}

impl From<CommandLabel> for DecisionLabel {
    fn from(l: CommandLabel) -> Self {
        DecisionLabel::Builtin(l)
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DecisionLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DecisionLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(DecisionLabel::from_name(&s))
    }
}
