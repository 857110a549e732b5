//! Slicing sessions into prediction instances and labeled examples.
//!
//! Example generators and event filters are the only site-specific pieces
//! of the pipeline. [`make_instance`] is shared by training and serving.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sessions::{Event, EventType, UserSession};

pub mod metadata_keys {
    pub const SESSION_EVENT_COUNT: &str = "session_event_count";
    pub const DISTINCT_PAGE_COUNT: &str = "distinct_page_count";
    pub const TOTAL_DWELL_SECONDS: &str = "total_dwell_seconds";
    /// Hour of day (UTC) of the first event, divided by 24.
    pub const HOUR_OF_DAY: &str = "hour_of_day";
    pub const IS_RETURNING_USER: &str = "is_returning_user";
}

pub mod stat_keys {
    pub const CLICK_COUNT: &str = "click_count";
    pub const TIME_ON_SITE_SECONDS: &str = "time_on_site_seconds";
}

pub const DEFAULT_MAX_LEN: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum ExampleError {
    #[error("generator {generator} returned cut {cut} for a session of {len} events")]
    GeneratorContract { generator: String, cut: usize, len: usize },
    #[error("unknown example generator {0:?}")]
    UnknownGenerator(String),
}

/// Fixed-length, front-padded event window plus session-level numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub events: Vec<Event>,
    pub metadata: BTreeMap<String, f64>,
    pub stats: BTreeMap<String, f64>,
}

impl Instance {
    /// The non-padding suffix.
    pub fn real_events(&self) -> &[Event] {
        let start = self.events.iter().position(|e| !e.is_blank()).unwrap_or(self.events.len());
        &self.events[start..]
    }

    pub fn stat(&self, key: &str) -> f64 {
        self.stats.get(key).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub instance: Instance,
    pub label: u8,
    pub cut_timestamp: i64,
    pub anonymous_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cut {
    /// Events strictly before this index may enter the instance.
    pub index: usize,
    pub label: u8,
}

pub trait ExampleGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    /// Event type treated as the prediction target; never part of an instance.
    fn positive_type(&self) -> EventType;
    fn scan(&self, session: &UserSession) -> Vec<Cut>;
}

pub trait EventFilter: Send + Sync {
    fn keep(&self, event: &Event) -> bool;
}

impl<F> EventFilter for F
where
    F: Fn(&Event) -> bool + Send + Sync,
{
    fn keep(&self, event: &Event) -> bool {
        self(event)
    }
}

/// Drops events of the listed types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeFilter {
    pub dropped: BTreeSet<EventType>,
}

impl TypeFilter {
    pub fn new(dropped: impl IntoIterator<Item = EventType>) -> Self {
        TypeFilter {
            dropped: dropped.into_iter().collect(),
        }
    }
}

impl EventFilter for TypeFilter {
    fn keep(&self, event: &Event) -> bool {
        !self.dropped.contains(&event.event_type)
    }
}

/// Emits one cut: at the first positive event, or at the end of the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstPositive {
    positive_type: EventType,
}

pub fn first_positive_generator(positive_type: EventType) -> FirstPositive {
    FirstPositive { positive_type }
}

impl ExampleGenerator for FirstPositive {
    fn name(&self) -> &str {
        "first_positive"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn positive_type(&self) -> EventType {
        self.positive_type
    }

    fn scan(&self, session: &UserSession) -> Vec<Cut> {
        let cut = match session.events.iter().position(|e| e.event_type == self.positive_type) {
            Some(index) => Cut { index, label: 1 },
            None => Cut {
                index: session.events.len(),
                label: 0,
            },
        };
        vec![cut]
    }
}

pub fn generator_by_name(name: &str, positive_type: EventType) -> Result<Box<dyn ExampleGenerator>, ExampleError> {
    match name {
        "first_positive" => Ok(Box::new(first_positive_generator(positive_type))),
        other => Err(ExampleError::UnknownGenerator(other.to_string())),
    }
}

/// Filters `events`, keeps the most recent `max_len`, front-pads with blank
/// events and computes metadata and stats over the kept real events.
///
/// Blank events in the input are ignored, so the operation is idempotent.
pub fn make_instance(events: &[Event], filters: &[Box<dyn EventFilter>], max_len: usize) -> Instance {
    let kept: Vec<&Event> = events
        .iter()
        .filter(|e| !e.is_blank() && filters.iter().all(|f| f.keep(e)))
        .collect();
    let kept = &kept[kept.len().saturating_sub(max_len)..];

    let (metadata, stats) = session_numbers(kept);
    let mut padded = Vec::with_capacity(max_len);
    padded.resize(max_len - kept.len(), Event::blank());
    padded.extend(kept.iter().map(|e| (*e).clone()));
    Instance {
        events: padded,
        metadata,
        stats,
    }
}

fn session_numbers(events: &[&Event]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let span_seconds = match (events.first(), events.last()) {
        (Some(first), Some(last)) => (last.timestamp - first.timestamp).max(0) as f64 / 1000.0,
        _ => 0.0,
    };
    let distinct_pages: BTreeSet<(&str, &str)> = events
        .iter()
        .filter(|e| e.event_type == EventType::Page)
        .filter_map(|e| e.url_parts.as_ref())
        .map(|u| (u.host.as_str(), u.path.as_str()))
        .collect();
    let hour = events
        .first()
        .map(|e| (e.timestamp.div_euclid(3_600_000)).rem_euclid(24) as f64 / 24.0)
        .unwrap_or(0.0);
    let returning = events.iter().any(|e| e.user_id.is_some());
    let clicks = events.iter().filter(|e| e.event_type == EventType::Click).count();

    let metadata = BTreeMap::from([
        (metadata_keys::SESSION_EVENT_COUNT.to_string(), events.len() as f64),
        (metadata_keys::DISTINCT_PAGE_COUNT.to_string(), distinct_pages.len() as f64),
        (metadata_keys::TOTAL_DWELL_SECONDS.to_string(), span_seconds),
        (metadata_keys::HOUR_OF_DAY.to_string(), hour),
        (metadata_keys::IS_RETURNING_USER.to_string(), if returning { 1.0 } else { 0.0 }),
    ]);
    let stats = BTreeMap::from([
        (stat_keys::CLICK_COUNT.to_string(), clicks as f64),
        (stat_keys::TIME_ON_SITE_SECONDS.to_string(), span_seconds),
    ]);
    (metadata, stats)
}

/// Runs `generator` over `session` and builds one example per cut.
pub fn generate_examples(
    session: &UserSession,
    generator: &dyn ExampleGenerator,
    filters: &[Box<dyn EventFilter>],
    max_len: usize,
) -> Result<Vec<Example>, ExampleError> {
    if session.is_empty() {
        return Ok(Vec::new());
    }
    let positive = generator.positive_type();
    let len = session.events.len();
    let mut out = Vec::new();
    for cut in generator.scan(session) {
        if cut.index > len {
            return Err(ExampleError::GeneratorContract {
                generator: generator.name().to_string(),
                cut: cut.index,
                len,
            });
        }
        let cut_timestamp = match session.events.get(cut.index) {
            Some(e) => e.timestamp,
            None => session.events[len - 1].timestamp + 1,
        };
        let before: Vec<Event> = session.events[..cut.index]
            .iter()
            .filter(|e| e.event_type != positive && e.timestamp < cut_timestamp)
            .cloned()
            .collect();
        out.push(Example {
            instance: make_instance(&before, filters, max_len),
            label: cut.label,
            cut_timestamp,
            anonymous_id: session.anonymous_id.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(types: &[EventType]) -> UserSession {
        UserSession {
            anonymous_id: "u".into(),
            events: types
                .iter()
                .enumerate()
                .map(|(i, t)| Event::new(1_000 * (i as i64 + 1), "u", *t))
                .collect(),
        }
    }

    fn no_logs() -> Vec<Box<dyn EventFilter>> {
        vec![Box::new(TypeFilter::new([EventType::Log]))]
    }

    fn real_types(inst: &Instance) -> Vec<EventType> {
        inst.real_events().iter().map(|e| e.event_type).collect()
    }

    use EventType::*;

    #[test]
    fn purchase_session_yields_positive_example() {
        let s = session(&[Page, Click, Log, Page, Positive]);
        let gen = first_positive_generator(Positive);
        let ex = generate_examples(&s, &gen, &no_logs(), 40).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].label, 1);
        assert_eq!(real_types(&ex[0].instance), vec![Page, Click, Page]);
        assert_eq!(ex[0].cut_timestamp, 5_000);
    }

    #[test]
    fn no_positive_cuts_at_end() {
        let s = session(&[Page, Click, Page]);
        let ex = generate_examples(&s, &first_positive_generator(Positive), &[], 40).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].label, 0);
        assert_eq!(real_types(&ex[0].instance), vec![Page, Click, Page]);
    }

    #[test]
    fn empty_session_has_no_examples() {
        let s = session(&[]);
        assert!(generate_examples(&s, &first_positive_generator(Positive), &[], 40)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn first_positive_picks_earliest() {
        let mut types = vec![Page; 12];
        types[4] = Positive;
        types[9] = Positive;
        let cuts = first_positive_generator(Positive).scan(&session(&types));
        assert_eq!(cuts, vec![Cut { index: 4, label: 1 }]);
        assert_eq!(
            first_positive_generator(Positive).scan(&session(&[Page, Click])),
            vec![Cut { index: 2, label: 0 }]
        );
    }

    #[test]
    fn positive_first_gives_all_blank_instance() {
        let s = session(&[Positive, Page]);
        let ex = generate_examples(&s, &first_positive_generator(Positive), &[], 40).unwrap();
        assert_eq!(ex[0].label, 1);
        assert!(ex[0].instance.real_events().is_empty());
        assert!(ex[0].instance.events.iter().all(Event::is_blank));
    }

    struct Broken;
    impl ExampleGenerator for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn version(&self) -> &str {
            "0"
        }
        fn positive_type(&self) -> EventType {
            Positive
        }
        fn scan(&self, s: &UserSession) -> Vec<Cut> {
            vec![Cut { index: s.len() + 1, label: 0 }]
        }
    }

    #[test]
    fn out_of_range_cut_is_contract_error() {
        let err = generate_examples(&session(&[Page]), &Broken, &[], 4).unwrap_err();
        assert!(matches!(err, ExampleError::GeneratorContract { cut: 2, len: 1, .. }));
    }

    #[test]
    fn padding_and_truncation() {
        let events: Vec<Event> = (1..=3).map(|t| Event::new(t, "u", Page)).collect();
        let inst = make_instance(&events, &[], 40);
        assert_eq!(inst.events.len(), 40);
        assert!(inst.events[..37].iter().all(Event::is_blank));
        assert_eq!(inst.real_events().len(), 3);

        let many: Vec<Event> = (1..=50).map(|t| Event::new(t, "u", Click)).collect();
        let inst = make_instance(&many, &[], 40);
        assert_eq!(inst.events.len(), 40);
        assert_eq!(inst.events[0].timestamp, 11);
        assert_eq!(inst.events[39].timestamp, 50);
        assert_eq!(inst.stat(stat_keys::CLICK_COUNT), 40.0);

        let empty = make_instance(&[], &[], 40);
        assert!(empty.events.iter().all(Event::is_blank));
        assert!(empty.stats.values().all(|v| *v == 0.0));
        assert!(empty.metadata.values().all(|v| *v == 0.0));
    }

    #[test]
    fn stats_and_metadata() {
        let events = vec![
            Event::new(3_600_000 * 5, "u", Page).with_url("https://s.example/a"),
            Event::new(3_600_000 * 5 + 30_000, "u", Click),
            Event::new(3_600_000 * 5 + 90_000, "u", Page).with_url("https://s.example/b"),
            Event::new(3_600_000 * 5 + 95_000, "u", Page).with_url("https://s.example/a?x=1"),
        ];
        let inst = make_instance(&events, &[], 10);
        assert_eq!(inst.stat(stat_keys::CLICK_COUNT), 1.0);
        assert_eq!(inst.stat(stat_keys::TIME_ON_SITE_SECONDS), 95.0);
        assert_eq!(inst.metadata[metadata_keys::DISTINCT_PAGE_COUNT], 2.0);
        assert_eq!(inst.metadata[metadata_keys::SESSION_EVENT_COUNT], 4.0);
        assert_eq!(inst.metadata[metadata_keys::HOUR_OF_DAY], 5.0 / 24.0);
        assert_eq!(inst.metadata[metadata_keys::IS_RETURNING_USER], 0.0);
    }

    #[test]
    fn timestamp_ties_with_cut_are_excluded() {
        let mut s = session(&[Page, Click, Positive]);
        s.events[1].timestamp = s.events[2].timestamp;
        let ex = generate_examples(&s, &first_positive_generator(Positive), &[], 8).unwrap();
        assert_eq!(real_types(&ex[0].instance), vec![Page]);
    }

    fn arb_types() -> impl Strategy<Value = Vec<EventType>> {
        prop::collection::vec(prop::sample::select(EventType::OBSERVABLE.to_vec()), 0..80)
    }

    proptest! {
        #[test]
        fn no_leakage(types in arb_types(), max_len in 1usize..50) {
            let s = session(&types);
            for ex in generate_examples(&s, &first_positive_generator(Positive), &no_logs(), max_len).unwrap() {
                prop_assert_eq!(ex.instance.events.len(), max_len);
                for e in ex.instance.real_events() {
                    prop_assert!(e.timestamp < ex.cut_timestamp);
                    prop_assert!(e.event_type != Positive && e.event_type != Log);
                }
                prop_assert!(ex.instance.stats.values().all(|v| v.is_finite() && *v >= 0.0));
            }
        }

        #[test]
        fn idempotent_on_real_suffix(types in arb_types(), max_len in 1usize..50) {
            let s = session(&types);
            let once = make_instance(&s.events, &no_logs(), max_len);
            let twice = make_instance(&once.events, &no_logs(), max_len);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn filter_order_irrelevant(types in arb_types()) {
            let s = session(&types);
            let a: Vec<Box<dyn EventFilter>> = vec![
                Box::new(TypeFilter::new([Log])),
                Box::new(|e: &Event| e.timestamp % 3_000 != 0),
            ];
            let b: Vec<Box<dyn EventFilter>> = vec![
                Box::new(|e: &Event| e.timestamp % 3_000 != 0),
                Box::new(TypeFilter::new([Log])),
            ];
            prop_assert_eq!(make_instance(&s.events, &a, 30), make_instance(&s.events, &b, 30));
        }
    }
}
