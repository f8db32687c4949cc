use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arm/charge discipline of the pulse generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseGenState {
    Disarmed,
    Armed,
    Charging,
    Ready,
    Faulted(String),
}

impl PulseGenState {
    pub fn name(&self) -> &'static str {
        match self {
            PulseGenState::Disarmed => "Disarmed",
            PulseGenState::Armed => "Armed",
            PulseGenState::Charging => "Charging",
            PulseGenState::Ready => "Ready",
            PulseGenState::Faulted(_) => "Faulted",
        }
    }

    /// Parses the `STATE=` value of a status response.
    pub fn parse(s: &str) -> Option<PulseGenState> {
        Some(match s {
            "Disarmed" => PulseGenState::Disarmed,
            "Armed" => PulseGenState::Armed,
            "Charging" => PulseGenState::Charging,
            "Ready" => PulseGenState::Ready,
            other => PulseGenState::Faulted(other.strip_prefix("Faulted:")?.to_string()),
        })
    }

    pub fn wire(&self) -> String {
        match self {
            PulseGenState::Faulted(r) => format!("Faulted:{r}"),
            other => other.name().to_string(),
        }
    }

    pub fn accepts_config(&self) -> bool {
        matches!(self, PulseGenState::Disarmed | PulseGenState::Armed)
    }
}

impl fmt::Display for PulseGenState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseGenState::Faulted(r) => write!(f, "Faulted({r})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Inputs to the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseEvent {
    Arm,
    Disarm,
    Charge,
    /// The charge latency elapsed.
    Charged,
    /// Software `FIRE` or a hardware trigger edge.
    Fire,
    Fault,
}

impl PulseEvent {
    fn op(self) -> &'static str {
        match self {
            PulseEvent::Arm => "arm",
            PulseEvent::Disarm => "disarm",
            PulseEvent::Charge => "charge",
            PulseEvent::Charged => "finish charging",
            PulseEvent::Fire => "fire",
            PulseEvent::Fault => "fault",
        }
    }
}

/// The transition function. Illegal transitions name the current state.
pub fn transition(state: &PulseGenState, event: PulseEvent) -> Result<PulseGenState> {
    use PulseEvent as E;
    use PulseGenState as S;
    let next = match (state, event) {
        (_, E::Disarm) => S::Disarmed,
        (_, E::Fault) => S::Faulted("hardware fault".into()),
        (S::Disarmed, E::Arm) => S::Armed,
        (S::Armed, E::Charge) => S::Charging,
        (S::Charging, E::Charged) => S::Ready,
        (S::Ready, E::Fire) => S::Armed,
        (s, e) => {
            return Err(Error::State {
                device: "pulse",
                op: e.op(),
                state: s.to_string(),
            })
        }
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVENTS: [PulseEvent; 6] = [
        PulseEvent::Arm,
        PulseEvent::Disarm,
        PulseEvent::Charge,
        PulseEvent::Charged,
        PulseEvent::Fire,
        PulseEvent::Fault,
    ];

    #[test]
    fn happy_path() {
        let mut s = PulseGenState::Disarmed;
        for e in [PulseEvent::Arm, PulseEvent::Charge, PulseEvent::Charged] {
            s = transition(&s, e).unwrap();
        }
        assert_eq!(s, PulseGenState::Ready);
        s = transition(&s, PulseEvent::Fire).unwrap();
        assert_eq!(s, PulseGenState::Armed);
        assert!(transition(&s, PulseEvent::Fire).is_err());
    }

    #[test]
    fn illegal_transitions_name_state() {
        let err = transition(&PulseGenState::Disarmed, PulseEvent::Charge).unwrap_err();
        assert!(err.to_string().contains("Disarmed"), "{err}");
        assert_eq!(
            transition(&PulseGenState::Ready, PulseEvent::Disarm).unwrap(),
            PulseGenState::Disarmed
        );
    }

    /// Exhaustive check over every event trace up to length 10: a fire
    /// succeeds exactly when the machine is in Ready.
    #[test]
    fn fire_only_from_ready_exhaustive() {
        fn walk(state: PulseGenState, depth: usize, checked: &mut usize) {
            if depth == 0 {
                return;
            }
            for e in EVENTS {
                let r = transition(&state, e);
                if e == PulseEvent::Fire {
                    assert_eq!(r.is_ok(), state == PulseGenState::Ready, "{state:?}");
                    *checked += 1;
                }
                if let Ok(next) = r {
                    walk(next, depth - 1, checked);
                }
            }
        }
        let mut checked = 0;
        walk(PulseGenState::Disarmed, 10, &mut checked);
        assert!(checked > 1000);
    }

    #[test]
    fn wire_names_round_trip() {
        for s in [
            PulseGenState::Disarmed,
            PulseGenState::Armed,
            PulseGenState::Charging,
            PulseGenState::Ready,
            PulseGenState::Faulted("overtemp".into()),
        ] {
            assert_eq!(PulseGenState::parse(&s.wire()), Some(s));
        }
        assert_eq!(PulseGenState::parse("Bogus"), None);
    }
}
