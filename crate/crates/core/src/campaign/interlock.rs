//! Motion/pulse safety interlock.
//!
//! The stage may only move while the pulse generator is disarmed. Drivers
//! consult the interlock before acting and report what they did, so the
//! journal is an exact trace of device commands in issue order.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Device-level commands, as seen by the interlock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceCommand {
    Home,
    Move,
    Arm,
    Disarm,
    Charge,
    Fire,
    PowerOn,
    PowerOff,
}

/// Snapshot of the interlock flags. `motion_permitted` implies `!pulse_armed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InterlockFlags {
    pub pulse_armed: bool,
    pub motion_permitted: bool,
}

#[derive(Debug, Default)]
struct Inner {
    pulse_armed: bool,
    held: bool,
    journal: Option<Vec<DeviceCommand>>,
}

#[derive(Debug, Clone, Default)]
pub struct Interlock {
    inner: Arc<Mutex<Inner>>,
}

impl Interlock {
    pub fn new() -> Self {
        Self::default()
    }

    /// An interlock that records every device command it is told about.
    pub fn with_journal() -> Self {
        let il = Self::default();
        il.lock().journal = Some(Vec::new());
        il
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn flags(&self) -> InterlockFlags {
        let g = self.lock();
        InterlockFlags {
            pulse_armed: g.pulse_armed,
            motion_permitted: !g.pulse_armed && !g.held,
        }
    }

    /// Fails unless motion is currently permitted.
    pub fn check_motion(&self) -> Result<()> {
        let g = self.lock();
        if g.pulse_armed {
            return Err(Error::Safety(
                "stage motion refused: pulse generator is armed".into(),
            ));
        }
        if g.held {
            return Err(Error::Safety("stage motion refused: motion is held".into()));
        }
        Ok(())
    }

    /// Checks and journals a motion command atomically.
    pub fn begin_motion(&self, cmd: DeviceCommand) -> Result<()> {
        let mut g = self.lock();
        if g.pulse_armed || g.held {
            drop(g);
            return self.check_motion();
        }
        if let Some(j) = g.journal.as_mut() {
            j.push(cmd);
        }
        Ok(())
    }

    /// Marks the pulse generator armed. Called before the arm command is sent.
    pub fn set_armed(&self, armed: bool) {
        self.lock().pulse_armed = armed;
    }

    /// Blocks or re-allows motion independent of the pulse state.
    pub fn hold_motion(&self, held: bool) {
        self.lock().held = held;
    }

    pub fn note(&self, cmd: DeviceCommand) {
        if let Some(j) = self.lock().journal.as_mut() {
            j.push(cmd);
        }
    }

    pub fn journal(&self) -> Vec<DeviceCommand> {
        self.lock().journal.clone().unwrap_or_default()
    }

    pub fn clear_journal(&self) {
        if let Some(j) = self.lock().journal.as_mut() {
            j.clear();
        }
    }
}

/// Returns the index of the first motion command issued between an arm and
/// the following disarm, if any.
pub fn find_motion_while_armed(journal: &[DeviceCommand]) -> Option<usize> {
    let mut armed = false;
    for (i, cmd) in journal.iter().enumerate() {
        match cmd {
            DeviceCommand::Arm => armed = true,
            DeviceCommand::Disarm => armed = false,
            DeviceCommand::Move | DeviceCommand::Home if armed => return Some(i),
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn armed_blocks_motion() {
        let il = Interlock::with_journal();
        assert!(il.flags().motion_permitted);
        il.set_armed(true);
        assert_eq!(
            il.flags(),
            InterlockFlags {
                pulse_armed: true,
                motion_permitted: false
            }
        );
        assert!(matches!(
            il.begin_motion(DeviceCommand::Move),
            Err(Error::Safety(_))
        ));
        assert!(il.journal().is_empty());
        il.set_armed(false);
        il.begin_motion(DeviceCommand::Move).unwrap();
        assert_eq!(il.journal(), vec![DeviceCommand::Move]);
    }

    #[test]
    fn hold_blocks_motion_without_arming() {
        let il = Interlock::new();
        il.hold_motion(true);
        assert!(il.check_motion().is_err());
        assert!(!il.flags().pulse_armed);
        il.hold_motion(false);
        assert!(il.check_motion().is_ok());
    }

    #[test]
    fn detector() {
        use DeviceCommand::*;
        assert_eq!(find_motion_while_armed(&[Move, Arm, Charge, Disarm, Move]), None);
        assert_eq!(find_motion_while_armed(&[Arm, Move]), Some(1));
        assert_eq!(find_motion_while_armed(&[Arm, Fire, Home]), Some(2));
    }
}
