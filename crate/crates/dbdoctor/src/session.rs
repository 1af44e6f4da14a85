//! Sessions: each diagnosis runs on its own thread with a fresh gateway and
//! is persisted as a directory holding JSON files.

use crate::config::{AppConfig, ConfigError, Resources};
use crate::runner::{run_diagnosis, AccessCounters, RunRequest, SessionMode};
use dbdoctor_core::gateway::{Gateway, ProviderConfig};
use dbdoctor_core::transcript::HUMAN;
use dbdoctor_core::{AnomalyAlert, ChatRecord, DiagnosisReport, SessionLog};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Running,
    AwaitingFeedback,
    Done,
    Aborted,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Done | SessionStatus::Aborted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub cause_id: String,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub alert: AnomalyAlert,
    pub mode: SessionMode,
    pub status: SessionStatus,
    /// Present exactly when `status` is done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DiagnosisReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub access: AccessCounters,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("session {0} already exists")]
    Duplicate(String),
    #[error("session {0} has finished and no longer takes feedback")]
    Terminal(String),
    #[error("session {0} has no report yet")]
    NotDone(String),
    #[error("cause {cause} is not in the report of session {session}")]
    UnknownCause { session: String, cause: String },
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("storage failure: {0}")]
    Storage(String),
}

/// `<root>/<session_id>/session.json` and `transcript.json`.
#[derive(Clone, Debug)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).join("session.json").exists()
    }

    pub fn save(&self, session: &Session, transcript: &[ChatRecord]) -> Result<(), ServiceError> {
        let dir = self.dir(&session.session_id);
        let io = |e: std::io::Error| ServiceError::Storage(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(&dir).map_err(io)?;
        let write = |name: &str, body: String| std::fs::write(dir.join(name), body).map_err(io);
        write("session.json", serde_json::to_string_pretty(session).expect("session serializes"))?;
        write("transcript.json", serde_json::to_string_pretty(transcript).expect("records serialize"))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<(Session, Vec<ChatRecord>), ServiceError> {
        let dir = self.dir(id);
        if !dir.join("session.json").exists() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let read = |name: &str| -> Result<String, ServiceError> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| ServiceError::Storage(format!("{}: {e}", dir.display())))
        };
        let session = serde_json::from_str(&read("session.json")?).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let transcript = serde_json::from_str(&read("transcript.json")?).map_err(|e| ServiceError::Storage(e.to_string()))?;
        Ok((session, transcript))
    }
}

struct Entry {
    session: Mutex<Session>,
    log: Arc<SessionLog>,
}

impl Entry {
    fn view(&self) -> Session {
        let mut s = self.session.lock().expect("session poisoned").clone();
        if s.status == SessionStatus::Running && self.log.is_awaiting() {
            s.status = SessionStatus::AwaitingFeedback;
        }
        s
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct StartRequest {
    pub alert: AnomalyAlert,
    pub mode: SessionMode,
    #[serde(default)]
    pub session_id: Option<String>,
}

/// Owns all live sessions. Cheap to share behind an `Arc`.
pub struct SessionManager {
    config: AppConfig,
    resources: Resources,
    store: SessionStore,
    sessions: Mutex<BTreeMap<String, Arc<Entry>>>,
    next_id: Mutex<u64>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionManager {
    pub fn new(config: AppConfig) -> Result<Self, ServiceError> {
        let resources = config.resources()?;
        Ok(Self {
            store: SessionStore::new(config.sessions_dir.clone()),
            config,
            resources,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: Mutex::new(0),
        })
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn provider_for(&self, mode: SessionMode) -> &ProviderConfig {
        let alt = match mode {
            SessionMode::Single => None,
            SessionMode::Collaborative => self.config.collab_provider.as_ref(),
            SessionMode::BaselineMetricsOnly => self.config.baseline_provider.as_ref(),
        };
        alt.unwrap_or(&self.config.provider)
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ServiceError> {
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn fresh_id(&self, alert: &AnomalyAlert, taken: &BTreeMap<String, Arc<Entry>>) -> String {
        let mut n = self.next_id.lock().expect("id counter poisoned");
        let stem: String = alert
            .alert_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .take(64)
            .collect();
        loop {
            *n += 1;
            let id = format!("{}-{:04}", if stem.is_empty() { "session" } else { &stem }, *n);
            if !taken.contains_key(&id) && !self.store.exists(&id) {
                return id;
            }
        }
    }

    /// Registers the session, persists it and starts the diagnosis thread.
    pub fn start(&self, req: StartRequest) -> Result<Session, ServiceError> {
        req.alert.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let provider = self.provider_for(req.mode).clone();
        let gw = Gateway::from_config(&provider).map_err(|e| ServiceError::Config(ConfigError::Invalid(e.to_string())))?;
        let (entry, session) = {
            let mut all = self.sessions.lock().expect("sessions poisoned");
            let id = match req.session_id {
                Some(id) => {
                    if !valid_id(&id) {
                        return Err(ServiceError::BadRequest(format!("session_id {id:?} must be 1-128 letters, digits, '-' or '_'")));
                    }
                    if all.contains_key(&id) || self.store.exists(&id) {
                        return Err(ServiceError::Duplicate(id));
                    }
                    id
                }
                None => self.fresh_id(&req.alert, &all),
            };
            let session = Session {
                session_id: id.clone(),
                alert: req.alert,
                mode: req.mode,
                status: SessionStatus::Running,
                report: None,
                error: None,
                verdicts: Vec::new(),
                access: AccessCounters::default(),
            };
            let entry = Arc::new(Entry {
                session: Mutex::new(session.clone()),
                log: Arc::new(SessionLog::new()),
            });
            all.insert(id, entry.clone());
            (entry, session)
        };
        self.store.save(&session, &[])?;

        let resources = self.resources.clone();
        let store = self.store.clone();
        let source = {
            let mut s = self.config.source.clone();
            let mut t = resources.thresholds.clone();
            t.extend(s.thresholds);
            s.thresholds = t;
            s
        };
        let params = self.config.search.clone();
        let collab = self.config.collab.clone();
        std::thread::Builder::new()
            .name(format!("session-{}", session.session_id))
            .spawn(move || {
                let alert = entry.session.lock().expect("session poisoned").alert.clone();
                let mode = entry.session.lock().expect("session poisoned").mode;
                let req = RunRequest {
                    alert: &alert,
                    mode,
                    source,
                    params,
                    collab,
                };
                let (result, access) = run_diagnosis(&resources, &gw, req, &entry.log);
                let snapshot = {
                    let mut s = entry.session.lock().expect("session poisoned");
                    s.access = access;
                    match result {
                        Ok(report) => {
                            s.report = Some(report);
                            s.status = SessionStatus::Done;
                        }
                        Err(e) => {
                            tracing::warn!(session = %s.session_id, error = %e, "diagnosis aborted");
                            s.error = Some(e);
                            s.status = SessionStatus::Aborted;
                        }
                    }
                    s.clone()
                };
                entry.log.close();
                if let Err(e) = store.save(&snapshot, &entry.log.records()) {
                    tracing::error!(error = %e, "cannot persist session");
                }
            })
            .map_err(|e| ServiceError::Storage(format!("cannot spawn session thread: {e}")))?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session, ServiceError> {
        Ok(self.entry(id)?.view())
    }

    pub fn list(&self) -> Vec<Session> {
        let all: Vec<Arc<Entry>> = self.sessions.lock().expect("sessions poisoned").values().cloned().collect();
        all.iter().map(|e| e.view()).collect()
    }

    pub fn messages_since(&self, id: &str, since: u64) -> Result<Vec<ChatRecord>, ServiceError> {
        Ok(self.entry(id)?.log.since(since))
    }

    /// Queues a human note for the running diagnosis.
    pub fn submit_feedback(&self, id: &str, text: &str) -> Result<ChatRecord, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("feedback text is empty".into()));
        }
        let entry = self.entry(id)?;
        // Hold the session lock so the run cannot finish between the check
        // and the append.
        let s = entry.session.lock().expect("session poisoned");
        if s.status.is_terminal() {
            return Err(ServiceError::Terminal(id.to_string()));
        }
        let rec = entry.log.submit_feedback(text.trim());
        drop(s);
        Ok(rec)
    }

    /// Records a human accept/reject on one reported cause. The verdict is
    /// added to the transcript and to the report notes.
    pub fn record_verdict(&self, id: &str, cause_id: &str, accepted: bool) -> Result<Session, ServiceError> {
        let entry = self.entry(id)?;
        let snapshot = {
            let mut s = entry.session.lock().expect("session poisoned");
            let report = s.report.as_mut().ok_or_else(|| ServiceError::NotDone(id.to_string()))?;
            let Some(cause) = report.causes.iter().find(|c| c.cause_id.eq_ignore_ascii_case(cause_id)) else {
                return Err(ServiceError::UnknownCause {
                    session: id.to_string(),
                    cause: cause_id.to_string(),
                });
            };
            let cause = cause.cause_id.clone();
            let note = format!("Verdict: {cause} {} by the user.", if accepted { "accepted" } else { "rejected" });
            let rec = entry.log.append(ChatRecord::analysis(HUMAN, note.clone()));
            report.notes.push(note);
            report.transcript.push(rec);
            s.verdicts.retain(|v| v.cause_id != cause);
            s.verdicts.push(Verdict { cause_id: cause, accepted });
            s.clone()
        };
        self.store.save(&snapshot, &entry.log.records())?;
        Ok(snapshot)
    }

    /// Polls until the session is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<Session, ServiceError> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.get(id)?;
            if s.status.is_terminal() || Instant::now() >= deadline {
                return Ok(s);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}
