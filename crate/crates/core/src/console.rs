//! The target's UART, where payloads print their results.

use std::time::Duration;

use crate::error::Result;
use crate::transport::LineTransport;

pub struct DutConsole {
    link: Box<dyn LineTransport>,
}

impl DutConsole {
    pub fn new(link: Box<dyn LineTransport>) -> Self {
        DutConsole { link }
    }

    /// Discards anything left over from a previous boot.
    pub fn drain(&mut self) -> Result<usize> {
        let mut n = 0;
        while self.link.recv_line(Duration::ZERO)?.is_some() {
            n += 1;
        }
        Ok(n)
    }

    /// Waits up to `first` for output, then keeps reading until the line is
    /// quiet for `quiet`. `None` if nothing arrived at all.
    pub fn collect(&mut self, first: Duration, quiet: Duration) -> Result<Option<String>> {
        let Some(line) = self.link.recv_line(first)? else {
            return Ok(None);
        };
        let mut lines = vec![line];
        while let Some(line) = self.link.recv_line(quiet)? {
            lines.push(line);
        }
        Ok(Some(lines.join("\n")))
    }
}

impl std::fmt::Debug for DutConsole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DutConsole").finish_non_exhaustive()
    }
}
