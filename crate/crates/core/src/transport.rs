//! Newline-delimited text links to devices.

use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bidirectional line-oriented link: a serial port or an in-process simulator.
pub trait LineTransport: Send {
    /// Writes `line` followed by `\n`.
    fn send_line(&mut self, line: &str) -> io::Result<()>;

    /// Next received line without its terminator, or `None` on timeout.
    fn recv_line(&mut self, timeout: Duration) -> io::Result<Option<String>>;
}

impl<T: LineTransport + ?Sized> LineTransport for Box<T> {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        (**self).send_line(line)
    }

    fn recv_line(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        (**self).recv_line(timeout)
    }
}

/// Sends `line` and collects responses until `is_terminal` accepts one.
///
/// A timeout triggers exactly one resend; a second timeout is an error.
pub fn transact<T, F>(
    link: &mut T,
    device: &'static str,
    line: &str,
    timeout: Duration,
    is_terminal: F,
) -> Result<Vec<String>>
where
    T: LineTransport + ?Sized,
    F: Fn(&str) -> bool,
{
    for attempt in 0..2 {
        if attempt > 0 {
            tracing::warn!(device, line, "no response, retrying once");
        }
        link.send_line(line)?;
        let mut lines = Vec::new();
        while let Some(resp) = link.recv_line(timeout)? {
            let done = is_terminal(&resp);
            lines.push(resp);
            if done {
                return Ok(lines);
            }
        }
    }
    Err(Error::Timeout {
        waiting_for: format!("{device} response to {line:?}"),
        timeout,
    })
}

/// Serial link settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialSettings {
    pub path: String,
    #[serde(default = "default_baud")]
    pub baud: u32,
}

fn default_baud() -> u32 {
    115_200
}

/// A serial port speaking newline-terminated lines. Bytes are passed through
/// unchanged; received bytes that are not UTF-8 are replaced, not dropped.
pub struct SerialTransport {
    port: Box<dyn serialport::SerialPort>,
    pending: Vec<u8>,
}

impl SerialTransport {
    pub fn open(settings: &SerialSettings) -> Result<Self> {
        let port = serialport::new(&settings.path, settings.baud)
            .timeout(Duration::from_millis(50))
            .open()
            .map_err(|e| Error::device("serial", format!("{}: {e}", settings.path)))?;
        Ok(SerialTransport {
            port,
            pending: Vec::new(),
        })
    }

    fn take_line(&mut self) -> Option<String> {
        let pos = self.pending.iter().position(|b| *b == b'\n')?;
        let mut line: Vec<u8> = self.pending.drain(..=pos).collect();
        line.pop();
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        Some(String::from_utf8_lossy(&line).into_owned())
    }
}

impl LineTransport for SerialTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        self.port.write_all(line.as_bytes())?;
        self.port.write_all(b"\n")?;
        self.port.flush()
    }

    fn recv_line(&mut self, timeout: Duration) -> io::Result<Option<String>> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 256];
        loop {
            if let Some(line) = self.take_line() {
                return Ok(Some(line));
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            match self.port.read(&mut buf) {
                Ok(n) => self.pending.extend_from_slice(&buf[..n]),
                Err(e) if e.kind() == io::ErrorKind::TimedOut => {}
                Err(e) => return Err(e),
            }
        }
    }
}
