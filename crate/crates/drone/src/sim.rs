//! Deterministic drone simulator speaking the plain-text protocol.
//!
//! Axes are centimetres: `x` forward, `y` right, `z` up. Every state is
//! kept inside the world bounds and `z` never goes below the floor.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::dispatch::{ProtocolCommand, Verb};

pub const TAKEOFF_HEIGHT_CM: i32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [i32; 3],
    pub max: [i32; 3],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: [-500, -500, 0],
            max: [500, 500, 300],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroneState {
    pub x: i32,
    pub y: i32,
    pub z: i32,
    pub flying: bool,
    pub battery: u8,
    pub last_command: String,
    pub bounds: Bounds,
}

impl Default for DroneState {
    fn default() -> Self {
        Self::new(Bounds::default())
    }
}

impl DroneState {
    pub fn new(bounds: Bounds) -> Self {
        Self {
            x: 0,
            y: 0,
            z: bounds.min[2].max(0),
            flying: false,
            battery: 100,
            last_command: String::new(),
            bounds,
        }
    }

    pub fn in_bounds(&self) -> bool {
        let p = [self.x, self.y, self.z];
        self.z >= 0 && (0..3).all(|i| self.bounds.min[i] <= p[i] && p[i] <= self.bounds.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reply {
    Ok,
    Error,
}

impl Reply {
    pub fn as_str(self) -> &'static str {
        match self {
            Reply::Ok => "ok",
            Reply::Error => "error",
        }
    }
}

/// Applies one protocol line. Rejected lines leave the state untouched.
pub fn sim_apply(state: &DroneState, text: &str) -> (DroneState, Reply) {
    let Ok(cmd) = text.parse::<ProtocolCommand>() else {
        return (state.clone(), Reply::Error);
    };
    let mut next = state.clone();
    match cmd {
        ProtocolCommand::Command => {}
        ProtocolCommand::Takeoff => {
            if state.flying || state.battery == 0 {
                return (state.clone(), Reply::Error);
            }
            next.flying = true;
            next.z = TAKEOFF_HEIGHT_CM.clamp(state.bounds.min[2].max(0), state.bounds.max[2]);
            next.battery -= 1;
        }
        ProtocolCommand::Land => {
            next.flying = false;
            next.z = state.bounds.min[2].max(0);
        }
        ProtocolCommand::Move(verb, n) => {
            if !state.flying || state.battery == 0 {
                return (state.clone(), Reply::Error);
            }
            let n = n as i32;
            let (axis, delta) = match verb {
                Verb::Forward => (0, n),
                Verb::Back => (0, -n),
                Verb::Right => (1, n),
                Verb::Left => (1, -n),
                Verb::Up => (2, n),
                Verb::Down => (2, -n),
            };
            let b = state.bounds;
            let lo = if axis == 2 { b.min[2].max(0) } else { b.min[axis] };
            let clamp = |v: i32| (v + delta).clamp(lo, b.max[axis]);
            match axis {
                0 => next.x = clamp(state.x),
                1 => next.y = clamp(state.y),
                _ => next.z = clamp(state.z),
            }
            next.battery -= 1;
        }
    }
    next.last_command = cmd.to_string();
    (next, Reply::Ok)
}

/// Folds a command log over `initial`.
pub fn replay<'a>(initial: &DroneState, log: impl IntoIterator<Item = &'a str>) -> DroneState {
    log.into_iter().fold(initial.clone(), |s, cmd| sim_apply(&s, cmd).0)
}

/// Shared simulator: one lock serializes every command, and each accepted
/// or rejected line is appended to the log and broadcast with the new state.
#[derive(Debug)]
pub struct Simulator {
    inner: Mutex<(DroneState, Vec<String>)>,
    initial: DroneState,
    updates: broadcast::Sender<(String, Reply, DroneState)>,
}

impl Simulator {
    pub fn new(initial: DroneState) -> Self {
        let (updates, _) = broadcast::channel(256);
        Self {
            inner: Mutex::new((initial.clone(), Vec::new())),
            initial,
            updates,
        }
    }

    pub fn apply(&self, text: &str) -> (Reply, DroneState) {
        let mut guard = self.inner.lock().expect("simulator lock");
        let (next, reply) = sim_apply(&guard.0, text);
        guard.0 = next.clone();
        guard.1.push(text.to_string());
        let _ = self.updates.send((text.to_string(), reply, next.clone()));
        (reply, next)
    }

    pub fn state(&self) -> DroneState {
        self.inner.lock().expect("simulator lock").0.clone()
    }

    pub fn initial(&self) -> &DroneState {
        &self.initial
    }

    /// Every line applied so far, in order.
    pub fn log(&self) -> Vec<String> {
        self.inner.lock().expect("simulator lock").1.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<(String, Reply, DroneState)> {
        self.updates.subscribe()
    }
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new(DroneState::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn protocol_examples() {
        let s = DroneState::default();
        assert_eq!(sim_apply(&s, "command").1, Reply::Ok);
        let (flying, r) = sim_apply(&s, "takeoff");
        assert_eq!((flying.z, flying.flying, r), (80, true, Reply::Ok));
        let (up, _) = sim_apply(&flying, "up 20");
        assert_eq!(up.z, 100);
        assert_eq!(up.last_command, "up 20");
        let (same, r) = sim_apply(&s, "forward 20");
        assert_eq!((same, r), (s.clone(), Reply::Error));
        let (landed, r) = sim_apply(&up, "land");
        assert_eq!((landed.z, landed.flying, r), (0, false, Reply::Ok));
        assert_eq!(sim_apply(&s, "garbage").1, Reply::Error);
    }

    #[test]
    fn axes() {
        let s = replay(&DroneState::default(), ["takeoff", "forward 30", "right 40", "left 100", "back 50", "down 60"]);
        assert_eq!((s.x, s.y, s.z), (-20, -60, 20));
        assert_eq!(s.battery, 94);
    }

    #[test]
    fn clamps_to_bounds() {
        let s = replay(&DroneState::default(), ["takeoff", "up 500", "up 500", "left 500", "left 500", "down 500"]);
        assert_eq!((s.y, s.z), (-500, 0));
        assert!(s.in_bounds());
    }

    fn command_text() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("command".to_string()),
            Just("takeoff".to_string()),
            Just("land".to_string()),
            (0usize..6, 20u32..=500).prop_map(|(v, n)| format!("{} {n}", Verb::ALL[v].as_str())),
            "[a-z0-9 ]{0,8}",
        ]
    }

    proptest! {
        #[test]
        fn replay_is_deterministic_and_bounded(log in proptest::collection::vec(command_text(), 0..60)) {
            let init = DroneState::default();
            let mut s = init.clone();
            for cmd in &log {
                s = sim_apply(&s, cmd).0;
                prop_assert!(s.in_bounds());
            }
            prop_assert_eq!(&replay(&init, log.iter().map(String::as_str)), &s);
            let sim = Simulator::new(init.clone());
            for cmd in &log {
                sim.apply(cmd);
            }
            prop_assert_eq!(&sim.state(), &s);
            let logged = sim.log();
            prop_assert_eq!(replay(&init, logged.iter().map(String::as_str)), s);
        }
    }
}
