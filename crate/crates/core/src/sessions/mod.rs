//! Raw event ingestion and per-user session assembly.

mod archive;
mod event;
mod useragent;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

pub use archive::{read_archive, read_archive_from, write_archive, ArchiveRead, ArchiveWriter};
pub use event::{preprocess_event, Event, EventRecord, EventType, PayloadValue, UrlParts};
pub use useragent::{UserAgentSummary, DEFAULT_BOT_DENYLIST};

pub const DEFAULT_MAX_SESSION_LEN: usize = 1000;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("archive i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Chronologically ordered events of one anonymous user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSession {
    pub anonymous_id: String,
    pub events: Vec<Event>,
}

impl UserSession {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, max_session_len: usize) -> Result<(), SessionError> {
        if self.events.len() > max_session_len {
            return Err(SessionError::InvalidSession(format!(
                "{} events exceeds cap {max_session_len}",
                self.events.len()
            )));
        }
        if let Some(e) = self.events.iter().find(|e| e.anonymous_id != self.anonymous_id) {
            return Err(SessionError::InvalidSession(format!(
                "event of {:?} inside session {:?}",
                e.anonymous_id, self.anonymous_id
            )));
        }
        if self.events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(SessionError::InvalidSession("events out of order".into()));
        }
        Ok(())
    }
}

pub type BotPredicate = Arc<dyn Fn(&Event) -> bool + Send + Sync>;

/// Flags events from automated clients or marked `synthetic` in the payload.
pub fn default_bot_predicate(event: &Event) -> bool {
    event.user_agent.as_ref().is_some_and(|ua| ua.is_bot)
        || event.payload.get("synthetic").is_some_and(|v| v.is_truthy())
}

#[derive(Clone)]
pub struct SessionizeConfig {
    pub max_session_len: usize,
    pub bot_predicate: BotPredicate,
}

impl Default for SessionizeConfig {
    fn default() -> Self {
        SessionizeConfig {
            max_session_len: DEFAULT_MAX_SESSION_LEN,
            bot_predicate: Arc::new(default_bot_predicate),
        }
    }
}

impl std::fmt::Debug for SessionizeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionizeConfig")
            .field("max_session_len", &self.max_session_len)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sessionized {
    /// Sorted by anonymous id.
    pub sessions: Vec<UserSession>,
    pub bot_events_removed: usize,
    pub sessions_dropped: usize,
    pub events_in_dropped_sessions: usize,
}

/// Groups events by anonymous id, removes bot traffic and over-long sessions.
///
/// Within a session the sort is stable, so events sharing a timestamp keep
/// their input order.
pub fn sessionize(events: &[Event], config: &SessionizeConfig) -> Sessionized {
    let mut out = Sessionized::default();
    let mut groups: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for event in events {
        if (config.bot_predicate)(event) {
            out.bot_events_removed += 1;
            continue;
        }
        groups.entry(event.anonymous_id.as_str()).or_default().push(event);
    }
    for (id, mut group) in groups {
        if group.len() > config.max_session_len {
            out.sessions_dropped += 1;
            out.events_in_dropped_sessions += group.len();
            continue;
        }
        group.sort_by_key(|e| e.timestamp);
        out.sessions.push(UserSession {
            anonymous_id: id.to_string(),
            events: group.into_iter().cloned().collect(),
        });
    }
    out
}
