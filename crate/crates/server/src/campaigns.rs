//! Campaign registry: at most one active campaign, per-campaign event feeds
//! and idempotent starts.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use emfi_core::calibration::{DieAnchor, OffsetCalibration};
use emfi_core::campaign::{attack_stats, plan_attempts, run_campaign, CampaignConfig, CancelToken, RunReport};
use emfi_core::persist::{load_campaign, CampaignDir};
use emfi_core::stats::success_rate;
use emfi_core::{AttemptRecord, OutcomeHistogram, Rig, StagePosition, SuccessStats};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::device::StatusCell;
use crate::error::{ApiError, ApiResult};

const FEED_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignState {
    Running,
    Completed,
    Cancelled,
    Failed,
    /// Found on disk with fewer attempts than planned, e.g. after a crash.
    Interrupted,
}

impl CampaignState {
    pub fn is_terminal(self) -> bool {
        self != CampaignState::Running
    }
}

/// Progress and partial statistics of one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignView {
    pub id: String,
    pub name: String,
    pub mode: String,
    pub state: CampaignState,
    pub completed: u64,
    pub total: u64,
    pub stats: SuccessStats,
    pub rate: Option<f64>,
    pub histogram: OutcomeHistogram,
    pub error: Option<String>,
}

impl CampaignView {
    fn absorb(&mut self, record: &AttemptRecord, exclude_errors: bool) {
        self.completed += 1;
        self.histogram.add(record.outcome);
        if !(exclude_errors && record.outcome.is_error()) {
            self.stats.record(record.outcome.is_success());
        }
        self.rate = success_rate(self.stats).ok();
    }
}

#[derive(Debug, Clone)]
pub enum FeedEvent {
    Started(CampaignView),
    Attempt(Arc<AttemptRecord>),
    Finished(CampaignView),
}

struct Entry {
    config: CampaignConfig,
    dir: CampaignDir,
    view: CampaignView,
    cancel: CancelToken,
    feed: broadcast::Sender<FeedEvent>,
}

#[derive(Default)]
struct Inner {
    entries: BTreeMap<String, Entry>,
    keys: HashMap<String, String>,
    active: Option<String>,
    latest: Option<String>,
    next_id: u64,
}

/// Everything the device worker needs to run one campaign.
pub struct Launch {
    pub id: String,
    pub config: CampaignConfig,
    pub dir: CampaignDir,
    pub cancel: CancelToken,
}

pub struct Campaigns {
    inner: Mutex<Inner>,
    root: PathBuf,
}

/// Schedule length does not depend on where the die sits.
fn planned_total(cfg: &CampaignConfig) -> emfi_core::Result<u64> {
    let anchor = DieAnchor {
        corner: StagePosition::ORIGIN,
        width: f64::MAX,
        height: f64::MAX,
    };
    Ok(plan_attempts(cfg, &anchor, &OffsetCalibration::from_offset(0.0, 0.0))?.len() as u64)
}

fn view_from_disk(id: &str, cfg: &CampaignConfig, dir: &Path) -> emfi_core::Result<CampaignView> {
    let loaded = load_campaign(dir)?;
    let mut histogram = OutcomeHistogram::default();
    for r in &loaded.records {
        histogram.add(r.outcome);
    }
    let stats = attack_stats(&loaded.records, cfg.exclude_errors);
    let total = planned_total(cfg)?;
    let completed = loaded.records.len() as u64;
    Ok(CampaignView {
        id: id.to_string(),
        name: cfg.name.clone(),
        mode: cfg.mode.name().to_string(),
        state: if completed >= total {
            CampaignState::Completed
        } else {
            CampaignState::Interrupted
        },
        completed,
        total,
        stats,
        rate: success_rate(stats).ok(),
        histogram,
        error: None,
    })
}

impl Campaigns {
    /// Opens the registry, picking up campaigns left by earlier runs.
    pub fn open(root: impl Into<PathBuf>) -> emfi_core::Result<Campaigns> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut inner = Inner::default();
        let mut found: Vec<_> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        found.sort();
        for id in found {
            let dir = CampaignDir::new(root.join(&id));
            let Ok(config) = dir.config() else { continue };
            match view_from_disk(&id, &config, dir.root()) {
                Ok(view) => {
                    if let Ok(n) = id.parse::<u64>() {
                        inner.next_id = inner.next_id.max(n + 1);
                    }
                    inner.latest = Some(id.clone());
                    inner.entries.insert(
                        id,
                        Entry {
                            config,
                            dir,
                            view,
                            cancel: CancelToken::new(),
                            feed: broadcast::channel(FEED_CAPACITY).0,
                        },
                    );
                }
                Err(e) => tracing::warn!(%id, error = %e, "skipping unreadable campaign"),
            }
        }
        inner.next_id = inner.next_id.max(1);
        Ok(Campaigns {
            inner: Mutex::new(inner),
            root,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn active(&self) -> Option<String> {
        self.lock().active.clone()
    }

    pub fn ensure_idle(&self) -> ApiResult<()> {
        match self.active() {
            Some(id) => Err(ApiError::busy(format!("campaign {id} is running"))),
            None => Ok(()),
        }
    }

    /// The active campaign, else the most recent one.
    pub fn current(&self) -> Option<String> {
        let inner = self.lock();
        inner.active.clone().or_else(|| inner.latest.clone())
    }

    pub fn view(&self, id: &str) -> ApiResult<CampaignView> {
        self.lock()
            .entries
            .get(id)
            .map(|e| e.view.clone())
            .ok_or_else(|| ApiError::not_found(format!("campaign {id}")))
    }

    pub fn list(&self) -> Vec<CampaignView> {
        self.lock().entries.values().map(|e| e.view.clone()).collect()
    }

    pub fn dir(&self, id: &str) -> ApiResult<CampaignDir> {
        self.lock()
            .entries
            .get(id)
            .map(|e| e.dir.clone())
            .ok_or_else(|| ApiError::not_found(format!("campaign {id}")))
    }

    /// Starts a new campaign unless another is active. A repeated
    /// idempotency key returns the campaign it created the first time.
    /// Returns the id and whether a campaign was created.
    pub fn begin(
        &self,
        config: CampaignConfig,
        key: Option<String>,
        start: impl FnOnce(Launch) -> ApiResult<()>,
    ) -> ApiResult<(String, bool)> {
        let mut inner = self.lock();
        if let Some(id) = key.as_ref().and_then(|k| inner.keys.get(k)) {
            let entry = &inner.entries[id];
            if entry.config != config {
                return Err(ApiError::validation(
                    "idempotency key was already used for a different campaign",
                ));
            }
            return Ok((id.clone(), false));
        }
        if let Some(id) = &inner.active {
            return Err(ApiError::busy(format!("campaign {id} is running")));
        }
        config.validate()?;
        let total = planned_total(&config)?;
        let id = format!("{:06}", inner.next_id);
        let path = self.root.join(&id);
        let dir = CampaignDir::create(&path, &config)?;
        let cancel = CancelToken::new();
        let view = CampaignView {
            id: id.clone(),
            name: config.name.clone(),
            mode: config.mode.name().to_string(),
            state: CampaignState::Running,
            completed: 0,
            total,
            stats: SuccessStats::default(),
            rate: None,
            histogram: OutcomeHistogram::default(),
            error: None,
        };
        let launch = Launch {
            id: id.clone(),
            config: config.clone(),
            dir: dir.clone(),
            cancel: cancel.clone(),
        };
        if let Err(e) = start(launch) {
            let _ = std::fs::remove_dir_all(&path);
            return Err(e);
        }
        let feed = broadcast::channel(FEED_CAPACITY).0;
        let _ = feed.send(FeedEvent::Started(view.clone()));
        inner.next_id += 1;
        inner.entries.insert(
            id.clone(),
            Entry {
                config,
                dir,
                view,
                cancel,
                feed,
            },
        );
        if let Some(k) = key {
            inner.keys.insert(k, id.clone());
        }
        inner.active = Some(id.clone());
        inner.latest = Some(id.clone());
        Ok((id, true))
    }

    /// Continues a stopped campaign from its log.
    pub fn resume(&self, id: &str, start: impl FnOnce(Launch) -> ApiResult<()>) -> ApiResult<CampaignView> {
        let mut inner = self.lock();
        if let Some(active) = &inner.active {
            return Err(ApiError::busy(format!("campaign {active} is running")));
        }
        let entry = inner
            .entries
            .get_mut(id)
            .ok_or_else(|| ApiError::not_found(format!("campaign {id}")))?;
        let mut view = view_from_disk(id, &entry.config, entry.dir.root())?;
        if view.state == CampaignState::Completed {
            return Err(ApiError::state(format!("campaign {id} is already complete")));
        }
        view.state = CampaignState::Running;
        let cancel = CancelToken::new();
        start(Launch {
            id: id.to_string(),
            config: entry.config.clone(),
            dir: entry.dir.clone(),
            cancel: cancel.clone(),
        })?;
        entry.view = view.clone();
        entry.cancel = cancel;
        let _ = entry.feed.send(FeedEvent::Started(view.clone()));
        inner.active = Some(id.to_string());
        inner.latest = Some(id.to_string());
        Ok(view)
    }

    /// Asks a running campaign to stop after its current cycle. Cancelling a
    /// finished campaign is a no-op.
    pub fn cancel(&self, id: &str) -> ApiResult<CampaignView> {
        let inner = self.lock();
        let entry = inner
            .entries
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("campaign {id}")))?;
        entry.cancel.cancel();
        Ok(entry.view.clone())
    }

    /// Feed receiver plus the state at the moment of subscribing.
    pub fn subscribe(&self, id: &str) -> ApiResult<(broadcast::Receiver<FeedEvent>, CampaignView, PathBuf)> {
        let inner = self.lock();
        let entry = inner
            .entries
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("campaign {id}")))?;
        Ok((entry.feed.subscribe(), entry.view.clone(), entry.dir.log_path()))
    }

    fn record(&self, id: &str, record: &AttemptRecord) {
        let mut inner = self.lock();
        if let Some(entry) = inner.entries.get_mut(id) {
            entry.view.absorb(record, entry.config.exclude_errors);
            let _ = entry.feed.send(FeedEvent::Attempt(Arc::new(record.clone())));
        }
    }

    fn finish(&self, id: &str, result: emfi_core::Result<RunReport>) {
        let mut inner = self.lock();
        let Some(entry) = inner.entries.get_mut(id) else { return };
        match result {
            Ok(report) => {
                entry.view.completed = report.completed;
                entry.view.state = if report.cancelled {
                    CampaignState::Cancelled
                } else {
                    CampaignState::Completed
                };
            }
            Err(e) => {
                tracing::error!(%id, error = %e, "campaign failed");
                entry.view.state = CampaignState::Failed;
                entry.view.error = Some(e.to_string());
            }
        }
        let view = entry.view.clone();
        let feed = entry.feed.clone();
        if inner.active.as_deref() == Some(id) {
            inner.active = None;
        }
        // Idle before the terminal event goes out, so a client reacting to it
        // can start the next campaign straight away.
        let _ = feed.send(FeedEvent::Finished(view));
    }
}

/// Runs a campaign on the device worker, appending every attempt to the log
/// before announcing it.
pub fn run_launch(
    rig: &mut Rig,
    launch: Launch,
    campaigns: &Campaigns,
    status: &StatusCell,
    pace: Duration,
) {
    let result = (|| {
        let (mut log, loaded) = launch.dir.open_log()?;
        let mut sink = |record: &AttemptRecord| -> emfi_core::Result<()> {
            log.append(record)?;
            campaigns.record(&launch.id, record);
            status.update(|s| s.position = record.position);
            if !pace.is_zero() {
                std::thread::sleep(pace);
            }
            Ok(())
        };
        run_campaign(rig, &launch.config, &loaded.records, &mut sink, &launch.cancel)
    })();
    campaigns.finish(&launch.id, result);
}
