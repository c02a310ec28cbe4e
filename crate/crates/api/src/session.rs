use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::http::StatusCode;
use refground::GroundingResult;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// One grounding request and the user's progress through its ranking.
#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: String,
    pub scene_id: String,
    pub query: String,
    pub result: GroundingResult,
    /// Rank positions (0-based) the user turned down.
    pub rejected: BTreeSet<usize>,
    /// Position currently shown, if any.
    pub current: Option<usize>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    last_used: Instant,
}

/// What the feedback step produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Confirmed { position: usize },
    Next { position: usize },
    Exhausted,
}

impl Session {
    pub fn new(session_id: String, scene_id: String, query: String, result: GroundingResult) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let current = result.next_candidate(&BTreeSet::new()).map(|(i, _)| i);
        Session {
            session_id,
            scene_id,
            query,
            result,
            rejected: BTreeSet::new(),
            current,
            created_at,
            last_used: Instant::now(),
        }
    }

    pub fn apply(&mut self, verdict: Verdict) -> Result<Outcome, ApiError> {
        let Some(current) = self.current else {
            return match verdict {
                Verdict::Reject => Ok(Outcome::Exhausted),
                Verdict::Accept => Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "exhausted",
                    "every candidate was rejected; nothing left to accept",
                )),
            };
        };
        match verdict {
            Verdict::Accept => Ok(Outcome::Confirmed { position: current }),
            Verdict::Reject => {
                self.rejected.insert(current);
                self.current = self.result.next_candidate(&self.rejected).map(|(i, _)| i);
                Ok(match self.current {
                    Some(position) => Outcome::Next { position },
                    None => Outcome::Exhausted,
                })
            }
        }
    }
}

/// In-memory sessions with an idle timeout.
#[derive(Debug)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Session>>,
    idle_timeout: Duration,
}

impl SessionStore {
    pub fn new(idle_timeout: Duration) -> Self {
        SessionStore {
            sessions: Mutex::new(HashMap::new()),
            idle_timeout,
        }
    }

    pub fn insert(&self, session: Session) {
        let mut map = self.sessions.lock().expect("session lock");
        self.purge(&mut map);
        map.insert(session.session_id.clone(), session);
    }

    fn purge(&self, map: &mut HashMap<String, Session>) {
        let timeout = self.idle_timeout;
        map.retain(|_, s| s.last_used.elapsed() <= timeout);
    }

    /// Runs `f` on a live session; accepted sessions are closed afterwards.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut map = self.sessions.lock().expect("session lock");
        let expired = map
            .get(id)
            .is_some_and(|s| s.last_used.elapsed() > self.idle_timeout);
        self.purge(&mut map);
        let session = map.get_mut(id).ok_or_else(|| {
            if expired {
                ApiError::new(StatusCode::NOT_FOUND, "session_expired", format!("session {id} expired"))
            } else {
                ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"))
            }
        })?;
        session.last_used = Instant::now();
        f(session)
    }

    pub fn remove(&self, id: &str) {
        self.sessions.lock().expect("session lock").remove(id);
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
