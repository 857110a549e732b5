use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use url::Url;

use super::useragent::UserAgentSummary;
use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Page,
    Click,
    Scroll,
    Log,
    Positive,
    PredictionPoint,
    Blank,
}

impl EventType {
    /// Every type a client can emit; `Blank` is padding only.
    pub const OBSERVABLE: [EventType; 6] = [
        EventType::Page,
        EventType::Click,
        EventType::Scroll,
        EventType::Log,
        EventType::Positive,
        EventType::PredictionPoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Page => "page",
            EventType::Click => "click",
            EventType::Scroll => "scroll",
            EventType::Log => "log",
            EventType::Positive => "positive",
            EventType::PredictionPoint => "prediction_point",
            EventType::Blank => "blank",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "page" => EventType::Page,
            "click" => EventType::Click,
            "scroll" => EventType::Scroll,
            "log" => EventType::Log,
            "positive" => EventType::Positive,
            "prediction_point" => EventType::PredictionPoint,
            "blank" => EventType::Blank,
            other => return Err(SessionError::Malformed(format!("unknown event type {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadValue {
    Num(f64),
    Str(String),
}

impl PayloadValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            PayloadValue::Num(n) => Some(*n),
            PayloadValue::Str(s) => s.parse().ok(),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            PayloadValue::Str(s) => Some(s),
            PayloadValue::Num(_) => None,
        }
    }

    pub fn is_truthy(&self) -> bool {
        match self {
            PayloadValue::Num(n) => *n != 0.0,
            PayloadValue::Str(s) => s.eq_ignore_ascii_case("true") || s == "1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlParts {
    pub host: String,
    pub path: String,
    pub query_keys: Vec<String>,
}

impl UrlParts {
    pub fn parse(raw: &str) -> Option<Self> {
        let url = Url::parse(raw).ok()?;
        let host = url.host_str()?.to_string();
        let query_keys = url.query_pairs().map(|(k, _)| k.into_owned()).collect();
        Some(UrlParts {
            host,
            path: url.path().to_string(),
            query_keys,
        })
    }

    /// Short URL carrying only the parsed parts; parses back to `self`.
    pub fn canonical(&self) -> String {
        let mut url = match Url::parse(&format!("https://{}", self.host)) {
            Ok(url) => url,
            Err(_) => return format!("https://{}{}", self.host, self.path),
        };
        url.set_path(&self.path);
        if !self.query_keys.is_empty() {
            let mut pairs = url.query_pairs_mut();
            for key in &self.query_keys {
                pairs.append_key_only(key);
            }
        }
        url.to_string()
    }
}

/// Payload keys written by preprocessing.
pub(crate) const KEY_URL: &str = "url";
pub(crate) const KEY_UA_BROWSER: &str = "ua_browser";
pub(crate) const KEY_UA_OS: &str = "ua_os";
pub(crate) const KEY_UA_BOT: &str = "ua_bot";
const KEY_USER_AGENT: &str = "userAgent";
const TOP_LEVEL_KEYS: [&str; 5] = ["timestamp", "anonymousId", "userId", "type", "payload"];

/// One tracked client action after preliminary feature engineering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EventRecord", try_from = "EventRecord")]
pub struct Event {
    pub timestamp: i64,
    pub anonymous_id: String,
    pub user_id: Option<String>,
    pub event_type: EventType,
    pub payload: BTreeMap<String, PayloadValue>,
    pub url_parts: Option<UrlParts>,
    pub user_agent: Option<UserAgentSummary>,
}

impl Event {
    pub fn blank() -> Self {
        Event {
            timestamp: 0,
            anonymous_id: String::new(),
            user_id: None,
            event_type: EventType::Blank,
            payload: BTreeMap::new(),
            url_parts: None,
            user_agent: None,
        }
    }

    /// Convenience constructor for already-clean events.
    pub fn new(timestamp: i64, anonymous_id: impl Into<String>, event_type: EventType) -> Self {
        Event {
            timestamp,
            anonymous_id: anonymous_id.into(),
            event_type,
            ..Event::blank()
        }
    }

    pub fn with_url(mut self, raw: &str) -> Self {
        self.url_parts = UrlParts::parse(raw);
        match &self.url_parts {
            Some(parts) => {
                self.payload.insert(KEY_URL.into(), PayloadValue::Str(parts.canonical()));
            }
            None => {
                self.payload.remove(KEY_URL);
            }
        }
        self
    }

    pub fn with_user_agent(mut self, raw: &str) -> Self {
        let summary = UserAgentSummary::parse(raw);
        write_ua_keys(&mut self.payload, &summary);
        self.user_agent = Some(summary);
        self
    }

    pub fn is_blank(&self) -> bool {
        self.event_type == EventType::Blank
    }

    /// Identifier used in prediction logs.
    pub fn id(&self) -> String {
        format!("{}:{}", self.timestamp, self.event_type)
    }

    pub fn to_record(&self) -> EventRecord {
        EventRecord::from(self.clone())
    }
}

fn write_ua_keys(payload: &mut BTreeMap<String, PayloadValue>, ua: &UserAgentSummary) {
    payload.insert(KEY_UA_BROWSER.into(), PayloadValue::Str(ua.browser_family.clone()));
    payload.insert(KEY_UA_OS.into(), PayloadValue::Str(ua.os_family.clone()));
    payload.insert(KEY_UA_BOT.into(), PayloadValue::Num(if ua.is_bot { 1.0 } else { 0.0 }));
}

/// Archive line layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub timestamp: i64,
    pub anonymous_id: String,
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(rename = "type")]
    pub event_type: EventType,
    #[serde(default)]
    pub payload: BTreeMap<String, PayloadValue>,
}

impl From<Event> for EventRecord {
    fn from(e: Event) -> Self {
        EventRecord {
            timestamp: e.timestamp,
            anonymous_id: e.anonymous_id,
            user_id: e.user_id,
            event_type: e.event_type,
            payload: e.payload,
        }
    }
}

impl TryFrom<EventRecord> for Event {
    type Error = SessionError;

    fn try_from(r: EventRecord) -> Result<Self, Self::Error> {
        let url_parts = r.payload.get(KEY_URL).and_then(|v| v.as_str()).and_then(UrlParts::parse);
        let user_agent = ua_from_keys(&r.payload);
        let mut payload = r.payload;
        if url_parts.is_none() {
            payload.remove(KEY_URL);
        }
        Ok(Event {
            timestamp: r.timestamp,
            anonymous_id: r.anonymous_id,
            user_id: r.user_id,
            event_type: r.event_type,
            payload,
            url_parts,
            user_agent,
        })
    }
}

fn ua_from_keys(payload: &BTreeMap<String, PayloadValue>) -> Option<UserAgentSummary> {
    let browser = payload.get(KEY_UA_BROWSER)?.as_str()?.to_string();
    let os = payload.get(KEY_UA_OS)?.as_str()?.to_string();
    let is_bot = payload.get(KEY_UA_BOT).map(|v| v.is_truthy()).unwrap_or(false);
    Some(UserAgentSummary {
        browser_family: browser,
        os_family: os,
        is_bot,
    })
}

fn payload_value(v: &Value) -> Option<PayloadValue> {
    match v {
        Value::Null => None,
        Value::Bool(b) => Some(PayloadValue::Num(if *b { 1.0 } else { 0.0 })),
        Value::Number(n) => n.as_f64().map(PayloadValue::Num),
        Value::String(s) => Some(PayloadValue::Str(s.clone())),
        other => Some(PayloadValue::Str(other.to_string())),
    }
}

fn timestamp_of(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Turns one raw collected record into an [`Event`].
///
/// URL strings are reduced to host, path and query keys; user-agent strings
/// to a [`UserAgentSummary`]. Payload keys that repeat top-level fields are
/// dropped, and payload entries override top-level `url`/`userAgent`.
/// Already-preprocessed records pass through unchanged.
pub fn preprocess_event(raw: &Map<String, Value>) -> Result<Event, SessionError> {
    let timestamp = raw
        .get("timestamp")
        .and_then(timestamp_of)
        .ok_or_else(|| SessionError::Malformed("missing or invalid timestamp".into()))?;
    let anonymous_id = match raw.get("anonymousId") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        _ => return Err(SessionError::Malformed("missing anonymousId".into())),
    };
    let event_type: EventType = match raw.get("type") {
        Some(Value::String(s)) => s.parse()?,
        _ => return Err(SessionError::Malformed("missing type".into())),
    };
    if event_type == EventType::Blank {
        return Err(SessionError::Malformed("blank events are not ingestible".into()));
    }
    if timestamp <= 0 {
        return Err(SessionError::Malformed(format!("non-positive timestamp {timestamp}")));
    }
    let user_id = match raw.get("userId") {
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        _ => None,
    };

    let mut payload = BTreeMap::new();
    let mut raw_url = raw.get(KEY_URL).and_then(Value::as_str).map(str::to_string);
    let mut raw_ua = raw.get(KEY_USER_AGENT).and_then(Value::as_str).map(str::to_string);
    if let Some(Value::Object(p)) = raw.get("payload") {
        for (key, value) in p {
            if TOP_LEVEL_KEYS.contains(&key.as_str()) {
                continue;
            }
            match key.as_str() {
                KEY_URL => raw_url = value.as_str().map(str::to_string),
                KEY_USER_AGENT => raw_ua = value.as_str().map(str::to_string),
                _ => {
                    if let Some(v) = payload_value(value) {
                        payload.insert(key.clone(), v);
                    }
                }
            }
        }
    }

    let url_parts = raw_url.as_deref().and_then(UrlParts::parse);
    if let Some(parts) = &url_parts {
        payload.insert(KEY_URL.into(), PayloadValue::Str(parts.canonical()));
    }
    let user_agent = match raw_ua {
        Some(ua) => {
            let summary = UserAgentSummary::parse(&ua);
            write_ua_keys(&mut payload, &summary);
            Some(summary)
        }
        None => ua_from_keys(&payload),
    };

    Ok(Event {
        timestamp,
        anonymous_id,
        user_id,
        event_type,
        payload,
        url_parts,
        user_agent,
    })
}
