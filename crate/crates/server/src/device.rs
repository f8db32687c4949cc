//! The single owner of the rig. Every device command runs on one worker
//! thread, fed through a bounded queue.

use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use emfi_core::{Rig, RigStatus};
use tokio::sync::oneshot;

use crate::error::{ApiError, ApiResult};

pub type Job = Box<dyn FnOnce(&mut Rig) + Send>;

/// Last known rig state, readable without waiting for the worker.
#[derive(Debug, Clone)]
pub struct StatusCell(Arc<Mutex<RigStatus>>);

impl StatusCell {
    pub fn get(&self) -> RigStatus {
        self.lock().clone()
    }

    pub fn update(&self, f: impl FnOnce(&mut RigStatus)) {
        f(&mut self.lock());
    }

    fn lock(&self) -> MutexGuard<'_, RigStatus> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone)]
pub struct Device {
    tx: SyncSender<Job>,
    status: StatusCell,
    reply_timeout: Duration,
}

impl Device {
    /// Starts the worker. `open` runs on the worker thread, so the rig never
    /// has to cross threads.
    pub fn spawn<F>(open: F, queue_depth: usize, reply_timeout: Duration) -> emfi_core::Result<Device>
    where
        F: FnOnce() -> emfi_core::Result<Rig> + Send + 'static,
    {
        let (tx, rx) = sync_channel::<Job>(queue_depth.max(1));
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        std::thread::Builder::new()
            .name("emfi-device".into())
            .spawn(move || {
                let mut rig = match open() {
                    Ok(rig) => rig,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let status = StatusCell(Arc::new(Mutex::new(rig.status())));
                if ready_tx.send(Ok(status.clone())).is_err() {
                    return;
                }
                for job in rx {
                    job(&mut rig);
                    let now = rig.status();
                    status.update(|s| *s = now);
                }
                let _ = rig.pulse.disarm();
                let _ = rig.trigger.power_off();
                tracing::info!("device worker stopped");
            })?;
        let status = ready_rx
            .recv()
            .map_err(|_| emfi_core::Error::Io(std::io::Error::other("device worker died")))??;
        Ok(Device {
            tx,
            status,
            reply_timeout,
        })
    }

    pub fn status(&self) -> RigStatus {
        self.status.get()
    }

    pub fn status_cell(&self) -> StatusCell {
        self.status.clone()
    }

    /// Queues a job without waiting for it. A full queue is `busy`.
    pub fn submit(&self, job: Job) -> ApiResult<()> {
        self.tx.try_send(job).map_err(|e| match e {
            TrySendError::Full(_) => ApiError::busy("device queue is full"),
            TrySendError::Disconnected(_) => ApiError::device("device worker is not running"),
        })
    }

    /// Runs `f` on the worker and waits for its result.
    pub async fn call<T, F>(&self, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Rig) -> Result<T, ApiError> + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.submit(Box::new(move |rig| {
            // The caller timed out or went away: do not act on a stale request.
            if tx.is_closed() {
                return;
            }
            let _ = tx.send(f(rig));
        }))?;
        match tokio::time::timeout(self.reply_timeout, rx).await {
            Ok(Ok(result)) => result,
            Ok(Err(_)) => Err(ApiError::device("device worker dropped the request")),
            Err(_) => Err(ApiError::device("device did not answer in time")),
        }
    }
}
