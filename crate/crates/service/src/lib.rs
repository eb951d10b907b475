//! HTTP service for the listening experiment: sessions with randomized
//! trial schedules, a headphone screening gate, durable rating capture and
//! dataset export.

pub mod error;
pub mod screening;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use timbre_core::bank::StimulusBank;
use timbre_core::ratings::{pair_schedule, RatingRecord};
use timbre_core::wav::encode_wav;
use tokio::sync::{Mutex, RwLock};

pub use error::ApiError;
use screening::{random_trials, render_trial, ScreeningConfig, ScreeningTrial};
use store::{
    Event, EventLog, LogError, ParticipantInfo, RatingDecision, RatingSubmission, ScheduledTrial,
    ScreeningState, Session,
};

/// Environment variable holding the bearer token for `/api/export`.
pub const ADMIN_TOKEN_ENV: &str = "TIMBRE_ADMIN_TOKEN";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub log_path: PathBuf,
    /// Export is refused when unset.
    pub admin_token: Option<String>,
    pub screening: ScreeningConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("event log replay failed at event {index} (session {session}): {message}")]
    Replay {
        index: usize,
        session: String,
        message: String,
    },
    #[error("rendering the stimulus bank failed")]
    Bank(#[from] timbre_core::Error),
}

struct Stimulus {
    wav: Vec<u8>,
    etag: String,
}

struct Inner {
    stimuli: Option<HashMap<String, Stimulus>>,
    ids: Vec<String>,
    sample_rate: u32,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    log: Arc<StdMutex<EventLog>>,
    admin_token: Option<String>,
    screening: ScreeningConfig,
    next_sequence: std::sync::atomic::AtomicU64,
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn etag(bytes: &[u8]) -> String {
    format!("\"{}\"", hex::encode(&Sha256::digest(bytes)[..16]))
}

impl AppState {
    /// Renders the bank (when given), opens the event log and replays it.
    /// Without a bank the service answers session creation with 503.
    pub fn open(bank: Option<&StimulusBank>, config: ServiceConfig) -> Result<Self, StartupError> {
        let (stimuli, ids, sample_rate) = match bank {
            Some(bank) => {
                bank.validate()?;
                let rendered = bank.render_all()?;
                let mut map = HashMap::new();
                for (patch, r) in bank.patches.iter().zip(&rendered) {
                    let wav = encode_wav(&[&r.buffer.samples], r.buffer.sample_rate)?;
                    let etag = etag(&wav);
                    map.insert(patch.id.clone(), Stimulus { wav, etag });
                }
                (Some(map), bank.ids(), bank.render.sample_rate)
            }
            None => (None, Vec::new(), timbre_core::SAMPLE_RATE),
        };

        let (log, events) = EventLog::open(&config.log_path)?;
        let mut sessions: HashMap<String, Session> = HashMap::new();
        let mut sequence = 0;
        for (index, event) in events.iter().enumerate() {
            let fail = |message: String| StartupError::Replay {
                index,
                session: event.session_id().to_string(),
                message,
            };
            match event {
                Event::SessionCreated { session_id, .. } => {
                    if sessions.contains_key(session_id) {
                        return Err(fail("duplicate session".into()));
                    }
                    let s = Session::from_created(event, sequence).expect("creation event");
                    sequence += 1;
                    sessions.insert(session_id.clone(), s);
                }
                other => {
                    let s = sessions
                        .get_mut(other.session_id())
                        .ok_or_else(|| fail("event for unknown session".into()))?;
                    s.apply(other, config.screening.pass_threshold).map_err(fail)?;
                }
            }
        }
        tracing::info!(
            sessions = sessions.len(),
            events = events.len(),
            path = %config.log_path.display(),
            "event log replayed"
        );
        let sessions = sessions
            .into_iter()
            .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
            .collect();
        Ok(Self(Arc::new(Inner {
            stimuli,
            ids,
            sample_rate,
            sessions: RwLock::new(sessions),
            log: Arc::new(StdMutex::new(log)),
            admin_token: config.admin_token,
            screening: config.screening,
            next_sequence: sequence.into(),
        })))
    }

    async fn append(&self, event: Event) -> Result<Event, ApiError> {
        let log = self.0.log.clone();
        tokio::task::spawn_blocking(move || {
            let mut log = log.lock().map_err(|_| ApiError::Internal("event log lock poisoned".into()))?;
            log.append(&event).map_err(|e| ApiError::internal(&e))?;
            Ok(event)
        })
        .await
        .map_err(|e| ApiError::Internal(format!("log writer panicked: {e}")))?
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    /// All rating records in session-creation then trial order.
    pub async fn export(&self) -> Vec<RatingRecord> {
        let sessions: Vec<_> = self.0.sessions.read().await.values().cloned().collect();
        let mut snapshot = Vec::with_capacity(sessions.len());
        for s in sessions {
            let s = s.lock().await;
            snapshot.push((s.sequence, s.export_records()));
        }
        snapshot.sort_by_key(|(seq, _)| *seq);
        snapshot.into_iter().flat_map(|(_, r)| r).collect()
    }
}

/// 128-bit random token as 32 lowercase hex digits.
fn token() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialView {
    pub index: usize,
    pub stim_a: String,
    pub stim_b: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub created_at: DateTime<Utc>,
    pub screening: ScreeningState,
    pub screening_trials: usize,
    pub next_trial_index: usize,
    pub total_trials: usize,
    pub complete: bool,
    pub trials: Vec<TrialView>,
}

impl SessionView {
    fn of(s: &Session) -> Self {
        Self {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            created_at: s.created_at,
            screening: s.screening,
            screening_trials: s.screening_trials.len(),
            next_trial_index: s.next_trial_index(),
            total_trials: s.schedule.len(),
            complete: s.is_complete(),
            trials: s
                .schedule
                .iter()
                .enumerate()
                .map(|(index, t)| TrialView {
                    index,
                    stim_a: t.stim_a.clone(),
                    stim_b: t.stim_b.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub hearing_issues: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningAnswers {
    pub answers: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub passed: bool,
    pub correct: usize,
    pub required: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingAck {
    pub trial_index: usize,
    pub rating: f64,
    pub submitted_at: DateTime<Utc>,
    pub next_trial_index: usize,
    pub complete: bool,
    /// True when this trial had already been recorded.
    pub duplicate: bool,
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = json_body(body)?;
    let inner = &state.0;
    if inner.stimuli.is_none() {
        return Err(ApiError::Unavailable("no stimulus bank loaded".into()));
    }
    if let Some(pid) = &req.participant_id {
        if pid.is_empty() || pid.len() > 64 || !pid.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(ApiError::BadRequest(
                "participant_id must be 1-64 characters of [A-Za-z0-9._-]".into(),
            ));
        }
    }
    let session_id = token();
    let participant_id = req.participant_id.unwrap_or_else(|| format!("p-{}", &token()[..12]));
    let schedule_seed: u64 = rand::rng().random();
    let schedule = pair_schedule(inner.ids.len(), schedule_seed)
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .into_iter()
        .map(|t| ScheduledTrial {
            stim_a: inner.ids[t.a].clone(),
            stim_b: inner.ids[t.b].clone(),
        })
        .collect();
    let mut rng = rand::rngs::StdRng::seed_from_u64(schedule_seed ^ 0x5c12_ee01);
    let screening = random_trials(inner.screening.trials, &mut rng);
    let event = Event::SessionCreated {
        session_id: session_id.clone(),
        participant_id,
        participant: ParticipantInfo {
            age: req.age,
            hearing_issues: req.hearing_issues,
        },
        schedule_seed,
        schedule,
        screening,
        created_at: Utc::now(),
    };
    let sequence = inner
        .next_sequence
        .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    let session = Session::from_created(&event, sequence).expect("creation event");
    let view = SessionView::of(&session);
    state.append(event).await?;
    inner
        .sessions
        .write()
        .await
        .insert(session_id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    Ok(Json(SessionView::of(&s)))
}

async fn submit_screening(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ScreeningAnswers>, JsonRejection>,
) -> Result<Json<ScreeningResult>, ApiError> {
    let session = state.session(&id).await?;
    let req = json_body(body)?;
    let mut s = session.lock().await;
    let threshold = state.0.screening.pass_threshold;
    let event = s.decide_screening(&req.answers, threshold, Utc::now())?;
    let event = state.append(event).await?;
    s.apply(&event, threshold).map_err(ApiError::Internal)?;
    let (passed, correct) = match s.screening {
        ScreeningState::Passed { correct } => (true, correct),
        ScreeningState::Failed { correct } => (false, correct),
        ScreeningState::Pending => unreachable!("screening was just resolved"),
    };
    Ok(Json(ScreeningResult {
        passed,
        correct,
        required: threshold,
        total: s.screening_trials.len(),
    }))
}

async fn submit_rating(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RatingSubmission>, JsonRejection>,
) -> Result<Json<RatingAck>, ApiError> {
    let session = state.session(&id).await?;
    let sub = json_body(body)?;
    let mut s = session.lock().await;
    let (record, duplicate) = match s.decide_rating(&sub, Utc::now())? {
        RatingDecision::Duplicate(existing) => (existing, true),
        RatingDecision::Record(record) => {
            let event = state.append(Event::RatingRecorded { record }).await?;
            s.apply(&event, state.0.screening.pass_threshold)
                .map_err(ApiError::Internal)?;
            let Event::RatingRecorded { record } = event else {
                unreachable!("rating event")
            };
            (record, false)
        }
    };
    Ok(Json(RatingAck {
        trial_index: record.trial_index,
        rating: record.rating,
        submitted_at: record.submitted_at,
        next_trial_index: s.next_trial_index(),
        complete: s.is_complete(),
        duplicate,
    }))
}

fn wav_name(file: &str) -> Result<&str, ApiError> {
    file.strip_suffix(".wav")
        .ok_or_else(|| ApiError::NotFound(format!("no such file {file}")))
}

fn wav_response(bytes: Vec<u8>, cache: &'static str, etag: Option<&str>) -> Response {
    let mut resp = Response::new(Body::from(bytes));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static(cache));
    if let Some(tag) = etag.and_then(|t| HeaderValue::from_str(t).ok()) {
        h.insert(header::ETAG, tag);
    }
    resp
}

async fn get_stimulus(
    State(state): State<AppState>,
    Path(file): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let id = wav_name(&file)?;
    let stimuli = state
        .0
        .stimuli
        .as_ref()
        .ok_or_else(|| ApiError::Unavailable("no stimulus bank loaded".into()))?;
    let stim = stimuli
        .get(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown stimulus {id}")))?;
    let cache = "public, max-age=86400";
    if headers
        .get(header::IF_NONE_MATCH)
        .is_some_and(|v| v.as_bytes() == stim.etag.as_bytes())
    {
        let mut resp = StatusCode::NOT_MODIFIED.into_response();
        resp.headers_mut()
            .insert(header::CACHE_CONTROL, HeaderValue::from_static(cache));
        return Ok(resp);
    }
    Ok(wav_response(stim.wav.clone(), cache, Some(&stim.etag)))
}

async fn get_screening_audio(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let index: usize = wav_name(&file)?
        .parse()
        .map_err(|_| ApiError::NotFound(format!("no such file {file}")))?;
    let session = state.session(&id).await?;
    let trial: ScreeningTrial = *session
        .lock()
        .await
        .screening_trials
        .get(index)
        .ok_or_else(|| ApiError::NotFound(format!("no screening trial {index}")))?;
    let cfg = state.0.screening.clone();
    let sr = state.0.sample_rate;
    let bytes = tokio::task::spawn_blocking(move || render_trial(&trial, &cfg, sr))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(wav_response(bytes, "private, max-age=3600", None))
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let expected = state
        .0
        .admin_token
        .as_deref()
        .ok_or_else(|| ApiError::Unavailable(format!("export disabled: {ADMIN_TOKEN_ENV} is not set")))?;
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected) {
        return Err(ApiError::Unauthorized("missing or wrong admin token".into()));
    }
    let mut body = Vec::new();
    timbre_core::ratings::write_jsonl(&mut body, &state.export().await)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut resp = Response::new(Body::from(body));
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/x-ndjson"),
    );
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    Ok(resp)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/screening", post(submit_screening))
        .route("/api/sessions/{id}/ratings", post(submit_rating))
        .route("/api/stimuli/{file}", get(get_stimulus))
        .route("/api/screening/{session}/{file}", get(get_screening_audio))
        .route("/api/export", get(export))
        .with_state(state)
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
