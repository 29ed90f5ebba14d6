//! Mapping recognised commands onto protocol text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use voxpilot_core::{CommandLabel, DecisionLabel};

use crate::error::{Error, Result};

pub const DEFAULT_STEP_CM: u32 = 20;
pub const MIN_STEP_CM: u32 = 20;
pub const MAX_STEP_CM: u32 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Up,
    Down,
    Left,
    Right,
    Forward,
    Back,
}

impl Verb {
    pub const ALL: [Verb; 6] = [Verb::Up, Verb::Down, Verb::Left, Verb::Right, Verb::Forward, Verb::Back];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Up => "up",
            Verb::Down => "down",
            Verb::Left => "left",
            Verb::Right => "right",
            Verb::Forward => "forward",
            Verb::Back => "back",
        }
    }

    pub fn for_label(label: CommandLabel) -> Option<Verb> {
        Some(match label {
            CommandLabel::Up => Verb::Up,
            CommandLabel::Down => Verb::Down,
            CommandLabel::Left => Verb::Left,
            CommandLabel::Right => Verb::Right,
            CommandLabel::Forward => Verb::Forward,
            CommandLabel::Backward => Verb::Back,
            CommandLabel::Unknown => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolCommand {
    Command,
    Takeoff,
    Land,
    Move(Verb, u32),
}

pub fn check_step(cm: u32) -> Result<u32> {
    if (MIN_STEP_CM..=MAX_STEP_CM).contains(&cm) {
        Ok(cm)
    } else {
        Err(Error::Step(cm))
    }
}

impl fmt::Display for ProtocolCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolCommand::Command => f.write_str("command"),
            ProtocolCommand::Takeoff => f.write_str("takeoff"),
            ProtocolCommand::Land => f.write_str("land"),
            ProtocolCommand::Move(v, n) => write!(f, "{} {n}", v.as_str()),
        }
    }
}

impl FromStr for ProtocolCommand {
    type Err = Error;

    /// Exact protocol text: a lowercase verb and, for movements, one
    /// distance in `20..=500`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Protocol(s.to_string());
        let mut parts = s.trim_end_matches(['\r', '\n']).split(' ');
        let verb = parts.next().ok_or_else(bad)?;
        let arg = parts.next();
        if parts.next().is_some() {
            return Err(bad());
        }
        let simple = |c| if arg.is_none() { Ok(c) } else { Err(bad()) };
        match verb {
            "command" => simple(ProtocolCommand::Command),
            "takeoff" => simple(ProtocolCommand::Takeoff),
            "land" => simple(ProtocolCommand::Land),
            _ => {
                let v = Verb::ALL.into_iter().find(|v| v.as_str() == verb).ok_or_else(bad)?;
                let digits = arg.filter(|a| !a.is_empty() && a.bytes().all(|b| b.is_ascii_digit())).ok_or_else(bad)?;
                let n: u32 = digits.parse().map_err(|_| bad())?;
                check_step(n).map_err(|_| bad())?;
                Ok(ProtocolCommand::Move(v, n))
            }
        }
    }
}

/// What an enrolled custom command does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Move(Verb),
    Takeoff,
    Land,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(v) => f.write_str(v.as_str()),
            Action::Takeoff => f.write_str("takeoff"),
            Action::Land => f.write_str("land"),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "takeoff" => Ok(Action::Takeoff),
            "land" => Ok(Action::Land),
            other => Verb::ALL
                .into_iter()
                .find(|v| v.as_str() == other)
                .map(Action::Move)
                .ok_or_else(|| Error::Protocol(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dispatch {
    Send(ProtocolCommand),
    NoOp { reason: String },
}

impl Dispatch {
    pub fn command(&self) -> Option<ProtocolCommand> {
        match self {
            Dispatch::Send(c) => Some(*c),
            Dispatch::NoOp { .. } => None,
        }
    }
}

/// Built-in labels map to their movement verb; `UNKNOWN` and unmapped custom
/// names never move the drone.
pub fn dispatch(label: &DecisionLabel, step_cm: u32, custom: &BTreeMap<String, Action>) -> Result<Dispatch> {
    let step = check_step(step_cm)?;
    Ok(match label {
        DecisionLabel::Builtin(CommandLabel::Unknown) => {
            log::info!("no-op: unknown command");
            Dispatch::NoOp {
                reason: "unknown command".into(),
            }
        }
        DecisionLabel::Builtin(l) => Dispatch::Send(ProtocolCommand::Move(
            Verb::for_label(*l).expect("named label"),
            step,
        )),
        DecisionLabel::Custom(name) => match custom.get(name) {
            Some(Action::Move(v)) => Dispatch::Send(ProtocolCommand::Move(*v, step)),
            Some(Action::Takeoff) => Dispatch::Send(ProtocolCommand::Takeoff),
            Some(Action::Land) => Dispatch::Send(ProtocolCommand::Land),
            None => {
                log::warn!("no-op: custom command `{name}` has no mapping");
                Dispatch::NoOp {
                    reason: format!("custom command `{name}` has no mapping"),
                }
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn send(label: DecisionLabel, step: u32) -> String {
        dispatch(&label, step, &BTreeMap::new()).unwrap().command().unwrap().to_string()
    }

    #[test]
    fn table() {
        assert_eq!(send(CommandLabel::Up.into(), 20), "up 20");
        assert_eq!(send(CommandLabel::Backward.into(), 50), "back 50");
        assert_eq!(send(CommandLabel::Left.into(), 500), "left 500");
        assert!(dispatch(&DecisionLabel::UNKNOWN, 20, &BTreeMap::new()).unwrap().command().is_none());
        assert!(dispatch(&CommandLabel::Up.into(), 19, &BTreeMap::new()).is_err());
    }

    #[test]
    fn custom_commands() {
        let mut map = BTreeMap::new();
        map.insert("HOVER".to_string(), Action::Move(Verb::Up));
        let hover = DecisionLabel::Custom("HOVER".into());
        assert_eq!(dispatch(&hover, 30, &map).unwrap().command().unwrap().to_string(), "up 30");
        let other = DecisionLabel::Custom("SPIN".into());
        assert!(matches!(dispatch(&other, 30, &map).unwrap(), Dispatch::NoOp { .. }));
    }

    #[test]
    fn protocol_parse_round_trip() {
        for text in ["command", "takeoff", "land", "up 20", "back 500", "forward 137"] {
            assert_eq!(text.parse::<ProtocolCommand>().unwrap().to_string(), text);
        }
        for bad in ["", "up", "up 19", "up 501", "UP 20", "up  20", "up 20 30", "land 5", "fly 20", "up -20", "up +20"] {
            assert!(bad.parse::<ProtocolCommand>().is_err(), "{bad:?}");
        }
    }
}
