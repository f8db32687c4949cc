//! Server-sent event stream of attempt records.
//!
//! Each attempt goes out as an `attempt` event whose id is its sequence id,
//! so `Last-Event-ID` (or `?last_id=`) resumes right after it. A `started`
//! event opens the stream and a `finished` event closes it.

use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::response::sse::{Event, KeepAlive, Sse};
use emfi_core::persist::read_log;
use emfi_core::AttemptRecord;
use futures::Stream;
use tokio::sync::{broadcast, mpsc};

use crate::campaigns::{CampaignView, Campaigns, FeedEvent};
use crate::error::ApiResult;

pub const ATTEMPT_EVENT: &str = "attempt";
pub const STARTED_EVENT: &str = "started";
pub const FINISHED_EVENT: &str = "finished";

fn attempt_event(record: &AttemptRecord) -> Event {
    Event::default()
        .event(ATTEMPT_EVENT)
        .id(record.seq.to_string())
        .json_data(record)
        .unwrap_or_else(|_| Event::default().comment("unencodable record"))
}

fn view_event(name: &str, view: &CampaignView) -> Event {
    Event::default()
        .event(name)
        .json_data(view)
        .unwrap_or_else(|_| Event::default().comment("unencodable view"))
}

pub fn subscribe(
    campaigns: Arc<Campaigns>,
    id: &str,
    last_id: Option<u64>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let (feed, view, log) = campaigns.subscribe(id)?;
    let (tx, rx) = mpsc::channel(256);
    tokio::spawn(pump(feed, view, log, last_id.map_or(0, |k| k + 1), tx));
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|event| (Ok(event), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

struct Cursor {
    /// Next sequence id the client has not seen.
    next: u64,
    tx: mpsc::Sender<Event>,
}

impl Cursor {
    async fn send(&mut self, record: &AttemptRecord) -> bool {
        if record.seq < self.next {
            return true;
        }
        self.next = record.seq + 1;
        self.tx.send(attempt_event(record)).await.is_ok()
    }

    /// Sends whatever the log holds beyond the cursor.
    async fn catch_up(&mut self, log: &Path) -> bool {
        let path = log.to_path_buf();
        let records = match tokio::task::spawn_blocking(move || read_log(&path)).await {
            Ok(Ok(loaded)) => loaded.records,
            Ok(Err(e)) => {
                tracing::warn!(error = %e, "event replay could not read the log");
                return false;
            }
            Err(_) => return false,
        };
        for r in &records {
            if !self.send(r).await {
                return false;
            }
        }
        true
    }
}

async fn pump(
    mut feed: broadcast::Receiver<FeedEvent>,
    view: CampaignView,
    log: PathBuf,
    next: u64,
    tx: mpsc::Sender<Event>,
) {
    let mut cursor = Cursor { next, tx };
    if cursor.tx.send(view_event(STARTED_EVENT, &view)).await.is_err() {
        return;
    }
    if !cursor.catch_up(&log).await {
        return;
    }
    if view.state.is_terminal() {
        let _ = cursor.tx.send(view_event(FINISHED_EVENT, &view)).await;
        return;
    }
    loop {
        match feed.recv().await {
            Ok(FeedEvent::Attempt(record)) => {
                if !cursor.send(&record).await {
                    return;
                }
            }
            Ok(FeedEvent::Started(_)) => {}
            Ok(FeedEvent::Finished(done)) => {
                if cursor.catch_up(&log).await {
                    let _ = cursor.tx.send(view_event(FINISHED_EVENT, &done)).await;
                }
                return;
            }
            Err(broadcast::error::RecvError::Lagged(_)) => {
                if !cursor.catch_up(&log).await {
                    return;
                }
            }
            Err(broadcast::error::RecvError::Closed) => return,
        }
    }
}
