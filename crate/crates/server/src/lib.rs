//! HTTP control surface for an EMFI rig: status, manual jog, calibration
//! entry, campaign lifecycle and a live event stream.

mod campaigns;
mod config;
mod device;
mod error;
mod events;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use emfi_core::calibration::{compute_probe_offset, CalibrationStore, DieAnchor, OffsetCalibration, PixelPoint};
use emfi_core::campaign::CampaignConfig;
use emfi_core::{ProbeTip, PulseConfig, Rig, RigStatus, StagePosition};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use campaigns::{CampaignState, CampaignView, Campaigns};
pub use config::ServerConfig;
pub use device::Device;
pub use error::{ApiError, ApiResult, ErrorCode};
pub use events::{ATTEMPT_EVENT, FINISHED_EVENT, STARTED_EVENT};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    device: Device,
    campaigns: Arc<Campaigns>,
    store: Arc<Mutex<CalibrationStore>>,
    config: Arc<ServerConfig>,
}

impl AppState {
    /// Opens the rig on its worker thread and loads the workspace.
    pub fn start(config: ServerConfig) -> emfi_core::Result<AppState> {
        std::fs::create_dir_all(&config.workspace)?;
        let store = CalibrationStore::load(&config.calibration_path())?;
        let rig_config = config.rig.clone();
        let stored = store.clone();
        let device = Device::spawn(
            move || {
                let mut rig = Rig::open(&rig_config)?;
                if let Some(cal) = stored.active() {
                    rig.calibration = Some(cal.clone());
                }
                if let Some(anchor) = stored.anchor {
                    rig.anchor = Some(anchor);
                }
                Ok(rig)
            },
            config.queue_depth,
            Duration::from_millis(config.reply_timeout_ms),
        )?;
        let campaigns = Arc::new(Campaigns::open(config.campaigns_dir())?);
        Ok(AppState {
            device,
            campaigns,
            store: Arc::new(Mutex::new(store)),
            config: Arc::new(config),
        })
    }

    pub fn campaigns(&self) -> &Campaigns {
        &self.campaigns
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/home", post(home))
        .route("/jog", post(jog))
        .route("/pulse/arm", post(arm))
        .route("/pulse/disarm", post(disarm))
        .route("/calibration", get(get_calibration).put(put_calibration))
        .route("/campaigns", get(list_campaigns).post(start_campaign))
        .route("/campaigns/{id}", get(get_campaign))
        .route("/campaigns/{id}/cancel", post(cancel_campaign))
        .route("/campaigns/{id}/resume", post(resume_campaign))
        .route("/events", get(events))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::validation("method not allowed on this endpoint")
        })
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Rig(#[from] emfi_core::Error),
    #[error("http server: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let bind = config.bind;
    let state = AppState::start(config)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// JSON body whose parse failures come back as `validation` errors.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = axum::body::Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::validation(e.body_text()))?;
        let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
            b"{}"
        } else {
            &bytes
        };
        serde_json::from_slice(bytes)
            .map(Body)
            .map_err(|e| ApiError::validation(format!("request body: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    #[serde(flatten)]
    pub rig: RigStatus,
    /// Active campaign id.
    pub campaign: Option<String>,
    pub busy: bool,
    pub calibrated: bool,
}

async fn status(State(s): State<AppState>) -> Json<StatusView> {
    let campaign = s.campaigns.active();
    let calibrated = s.store.lock().map(|st| st.active().is_some()).unwrap_or(false);
    Json(StatusView {
        rig: s.device.status(),
        busy: campaign.is_some(),
        campaign,
        calibrated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveReply {
    pub position: StagePosition,
    pub elapsed_ms: f64,
}

async fn home(State(s): State<AppState>) -> ApiResult<Json<MoveReply>> {
    s.campaigns.ensure_idle()?;
    let ack = s.device.call(|rig| Ok(rig.stage.home()?)).await?;
    Ok(Json(MoveReply {
        position: ack.position,
        elapsed_ms: ack.elapsed.as_secs_f64() * 1e3,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JogRequest {
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub dz: f64,
    #[serde(default = "default_feed")]
    pub feed: f64,
}

fn default_feed() -> f64 {
    10.0
}

async fn jog(State(s): State<AppState>, Body(req): Body<JogRequest>) -> ApiResult<Json<MoveReply>> {
    s.campaigns.ensure_idle()?;
    if ![req.dx, req.dy, req.dz].iter().all(|v| v.is_finite()) || !(req.feed.is_finite() && req.feed > 0.0) {
        return Err(ApiError::validation("jog needs finite deltas and a positive feed"));
    }
    let ack = s
        .device
        .call(move |rig| Ok(rig.stage.jog(req.dx, req.dy, req.dz, req.feed)?))
        .await?;
    Ok(Json(MoveReply {
        position: ack.position,
        elapsed_ms: ack.elapsed.as_secs_f64() * 1e3,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmRequest {
    #[serde(default)]
    pub pulse: Option<PulseConfig>,
}

async fn arm(State(s): State<AppState>, Body(req): Body<ArmRequest>) -> ApiResult<Json<RigStatus>> {
    s.campaigns.ensure_idle()?;
    let status = s
        .device
        .call(move |rig| {
            if let Some(cfg) = req.pulse {
                rig.pulse.set_config(cfg)?;
            }
            rig.pulse.arm()?;
            Ok(rig.status())
        })
        .await?;
    Ok(Json(status))
}

async fn disarm(State(s): State<AppState>) -> ApiResult<Json<RigStatus>> {
    // A running campaign owns the generator and disarms it between cycles itself.
    s.campaigns.ensure_idle()?;
    let status = s
        .device
        .call(|rig| {
            rig.pulse.disarm()?;
            Ok(rig.status())
        })
        .await?;
    Ok(Json(status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationView {
    pub store: CalibrationStore,
    /// Offset the rig is using right now.
    pub active_offset: Option<OffsetCalibration>,
    pub anchor: Option<DieAnchor>,
}

/// Offset measured from calibration-camera pixels, or entered directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetInput {
    Pixels {
        probe_center: PixelPoint,
        camera_center: PixelPoint,
        pixel_scale: f64,
    },
    Direct {
        dx: f64,
        dy: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationUpdate {
    /// Tip the offset belongs to. Mounting a different tip drops its stale offset.
    pub tip: Option<ProbeTip>,
    #[serde(default)]
    pub offset: Option<OffsetInput>,
    #[serde(default)]
    pub anchor: Option<DieAnchor>,
}

async fn calibration_view(s: &AppState) -> ApiResult<CalibrationView> {
    let store = s.store.lock().map_err(|_| ApiError::device("calibration store poisoned"))?.clone();
    let (active_offset, anchor) = if s.campaigns.active().is_some() {
        (store.active().cloned(), store.anchor)
    } else {
        s.device
            .call(|rig| Ok((rig.calibration.clone(), rig.anchor)))
            .await?
    };
    Ok(CalibrationView {
        store,
        active_offset,
        anchor,
    })
}

async fn get_calibration(State(s): State<AppState>) -> ApiResult<Json<CalibrationView>> {
    Ok(Json(calibration_view(&s).await?))
}

async fn put_calibration(
    State(s): State<AppState>,
    Body(update): Body<CalibrationUpdate>,
) -> ApiResult<Json<CalibrationView>> {
    s.campaigns.ensure_idle()?;
    let offset = match update.offset {
        Some(OffsetInput::Pixels {
            probe_center,
            camera_center,
            pixel_scale,
        }) => Some(compute_probe_offset(probe_center, camera_center, pixel_scale)?),
        Some(OffsetInput::Direct { dx, dy }) => {
            let cal = OffsetCalibration::from_offset(dx, dy);
            cal.validate()?;
            Some(cal)
        }
        None => None,
    };
    if offset.is_some() && update.tip.is_none() {
        return Err(ApiError::validation("an offset needs the tip it was measured with"));
    }
    let store = s.store.clone();
    let path = s.config.calibration_path();
    s.device
        .call(move |rig| {
            if let Some(anchor) = update.anchor {
                anchor.validate(rig.stage.limits())?;
            }
            let mut st = store.lock().map_err(|_| ApiError::device("calibration store poisoned"))?;
            let mut next = st.clone();
            if let Some(tip) = update.tip {
                next.mount_tip(&tip);
                if let Some(cal) = offset {
                    next.put(cal.for_tip(&tip, chrono::Utc::now()))?;
                }
            }
            if let Some(anchor) = update.anchor {
                next.anchor = Some(anchor);
            }
            next.save(&path)?;
            if update.tip.is_some() {
                rig.calibration = next.active().cloned();
            }
            if next.anchor.is_some() {
                rig.anchor = next.anchor;
            }
            *st = next;
            Ok(())
        })
        .await?;
    Ok(Json(calibration_view(&s).await?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

fn launcher(s: &AppState) -> impl FnOnce(campaigns::Launch) -> ApiResult<()> + '_ {
    move |launch| {
        let campaigns = s.campaigns.clone();
        let status = s.device.status_cell();
        let pace = if s.device.status().simulated {
            Duration::from_millis(s.config.sim_attempt_pace_ms)
        } else {
            Duration::ZERO
        };
        s.device.submit(Box::new(move |rig| {
            campaigns::run_launch(rig, launch, &campaigns, &status, pace);
        }))
    }
}

async fn start_campaign(
    State(s): State<AppState>,
    headers: HeaderMap,
    Body(config): Body<CampaignConfig>,
) -> ApiResult<impl IntoResponse> {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::validation("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let (id, created) = s.campaigns.begin(config, key, launcher(&s))?;
    let code = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((code, Json(Created { id })))
}

async fn list_campaigns(State(s): State<AppState>) -> Json<Vec<CampaignView>> {
    Json(s.campaigns.list())
}

async fn get_campaign(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<CampaignView>> {
    Ok(Json(s.campaigns.view(&id)?))
}

async fn cancel_campaign(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<CampaignView>)> {
    let view = s.campaigns.cancel(&id)?;
    let code = if view.state.is_terminal() {
        StatusCode::OK
    } else {
        StatusCode::ACCEPTED
    };
    Ok((code, Json(view)))
}

async fn resume_campaign(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<CampaignView>)> {
    let view = s.campaigns.resume(&id, launcher(&s))?;
    Ok((StatusCode::ACCEPTED, Json(view)))
}

#[derive(Debug, Default, Deserialize)]
struct EventQuery {
    campaign: Option<String>,
    last_id: Option<u64>,
}

async fn events(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EventQuery>,
) -> ApiResult<impl IntoResponse> {
    let id = q
        .campaign
        .or_else(|| s.campaigns.current())
        .ok_or_else(|| ApiError::not_found("no campaign to follow"))?;
    let header_id = match headers.get("last-event-id") {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|t| t.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::validation("Last-Event-ID must be a sequence id"))?,
        ),
        None => None,
    };
    events::subscribe(s.campaigns.clone(), &id, q.last_id.or(header_id))
}
