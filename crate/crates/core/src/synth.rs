//! Synthetic shop traffic with known purchase propensities.
//!
//! Each user performs one random walk over a page graph. Engagement, drawn
//! per user, scales both the walk length and the click rate; dwell times
//! are log-normal. Purchase probability is a logistic function of the
//! realized click count and time on site, so the ground truth is known
//! exactly for every simulated user.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::sessions::{Event, EventType};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid site model: {0}")]
    Config(String),
}

pub const BROWSER_AGENTS: &[&str] = &[
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0 Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 13_4) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/16.5 Safari/605.1.15",
    "Mozilla/5.0 (X11; Linux x86_64; rv:121.0) Gecko/20100101 Firefox/121.0",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 17_0 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Mobile/15E148",
    "Mozilla/5.0 (Linux; Android 14) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0 Mobile Safari/537.36",
];
pub const BOT_AGENT: &str = "Mozilla/5.0 (compatible; Googlebot/2.1; +http://www.google.com/bot.html)";
pub const CHECKOUT_PATH: &str = "/checkout/complete";

/// `sigmoid(intercept + click_coef * clicks + time_coef_per_minute * minutes)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propensity {
    pub intercept: f64,
    pub click_coef: f64,
    pub time_coef_per_minute: f64,
}

impl Default for Propensity {
    fn default() -> Self {
        Propensity {
            intercept: -5.0,
            click_coef: 0.15,
            time_coef_per_minute: 0.08,
        }
    }
}

impl Propensity {
    pub fn probability(&self, clicks: f64, time_on_site_seconds: f64) -> f64 {
        let z = self.intercept + self.click_coef * clicks + self.time_coef_per_minute * time_on_site_seconds / 60.0;
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteModel {
    pub host: String,
    /// Page paths; node ids are indices.
    pub pages: Vec<String>,
    /// Directed weighted edges `(from, to, weight)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub entry: usize,
    pub n_users: usize,
    pub start_timestamp_ms: i64,
    /// Session start times are spread uniformly over this many days.
    pub span_days: f64,
    /// Log-normal sigma of per-user engagement (median 1).
    pub engagement_sigma: f64,
    /// Expected extra page views per unit of engagement.
    pub pages_per_engagement: f64,
    /// Expected clicks per page per unit of engagement (engagement capped at 4).
    pub click_rate: f64,
    pub scroll_rate: f64,
    pub log_rate: f64,
    pub dwell_median_seconds: f64,
    pub dwell_sigma: f64,
    /// Probability that a dwell is replaced by `spike_seconds` (idle tab refresh).
    pub spike_probability: f64,
    pub spike_seconds: f64,
    pub propensity: Propensity,
    pub bot_fraction: f64,
    pub returning_fraction: f64,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SiteModel {
    fn default() -> Self {
        let mut pages = vec!["/".to_string()];
        let categories = ["shoes", "bags", "jackets", "accessories"];
        for c in categories {
            pages.push(format!("/c/{c}"));
        }
        for (ci, c) in categories.iter().enumerate() {
            for k in 0..3 {
                pages.push(format!("/p/{c}-{}", ci * 3 + k));
            }
        }
        pages.push("/cart".to_string());
        pages.push("/search".to_string());
        let cart = pages.len() - 2;
        let search = pages.len() - 1;
        let mut edges = Vec::new();
        for c in 1..=4 {
            edges.push((0, c, 3.0));
            edges.push((c, 0, 1.0));
            edges.push((search, c, 1.0));
            for k in 0..3 {
                let p = 5 + (c - 1) * 3 + k;
                edges.push((c, p, 2.0));
                edges.push((p, c, 1.5));
                edges.push((p, 5 + (c - 1) * 3 + (k + 1) % 3, 1.0));
                edges.push((p, cart, 0.5));
                edges.push((search, p, 0.5));
            }
        }
        edges.push((0, search, 1.0));
        edges.push((cart, 0, 1.0));
        edges.push((cart, 5, 0.5));
        SiteModel {
            host: "shop.example".into(),
            pages,
            edges,
            entry: 0,
            n_users: 20_000,
            start_timestamp_ms: 1_700_000_000_000,
            span_days: 14.0,
            engagement_sigma: 0.8,
            pages_per_engagement: 3.0,
            click_rate: 1.0,
            scroll_rate: 0.8,
            log_rate: 0.4,
            dwell_median_seconds: 20.0,
            dwell_sigma: 1.2,
            spike_probability: 0.0,
            spike_seconds: 3600.0,
            propensity: Propensity::default(),
            bot_fraction: 0.02,
            returning_fraction: 0.3,
            id_prefix: "anon".into(),
            seed: 7,
        }
    }
}

/// Ground truth for one simulated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub anonymous_id: String,
    pub is_bot: bool,
    pub clicks: usize,
    pub time_on_site_seconds: f64,
    /// Purchase probability; 0 for bots.
    pub propensity: f64,
    pub purchased: bool,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// All events in timestamp order (ties by user index).
    pub events: Vec<Event>,
    pub users: Vec<SyntheticUser>,
}

struct Graph {
    out: Vec<Vec<(usize, f64)>>,
}

impl SiteModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.pages.is_empty() {
            return bad("no pages".into());
        }
        if self.entry >= self.pages.len() {
            return bad(format!("entry {} out of range", self.entry));
        }
        for &(a, b, w) in &self.edges {
            if a >= self.pages.len() || b >= self.pages.len() {
                return bad(format!("edge ({a}, {b}) out of range"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("edge ({a}, {b}) has weight {w}"));
            }
        }
        let probs = [
            ("bot_fraction", self.bot_fraction),
            ("returning_fraction", self.returning_fraction),
            ("spike_probability", self.spike_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} not in [0, 1]"));
            }
        }
        let nonneg = [
            ("engagement_sigma", self.engagement_sigma),
            ("pages_per_engagement", self.pages_per_engagement),
            ("click_rate", self.click_rate),
            ("scroll_rate", self.scroll_rate),
            ("log_rate", self.log_rate),
            ("dwell_sigma", self.dwell_sigma),
            ("span_days", self.span_days),
            ("spike_seconds", self.spike_seconds),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(self.dwell_median_seconds > 0.0) {
            return bad("dwell_median_seconds must be positive".into());
        }
        let g = self.graph();
        let reach = |adj: &Vec<Vec<usize>>| {
            let mut seen = vec![false; self.pages.len()];
            let mut queue = VecDeque::from([self.entry]);
            seen[self.entry] = true;
            while let Some(n) = queue.pop_front() {
                for &m in &adj[n] {
                    if !seen[m] {
                        seen[m] = true;
                        queue.push_back(m);
                    }
                }
            }
            seen
        };
        let forward: Vec<Vec<usize>> = g.out.iter().map(|o| o.iter().map(|(m, _)| *m).collect()).collect();
        let mut backward = vec![Vec::new(); self.pages.len()];
        for &(a, b, _) in &self.edges {
            backward[b].push(a);
        }
        if let Some(i) = reach(&forward).iter().position(|s| !s) {
            return bad(format!("page {} unreachable from entry", self.pages[i]));
        }
        if let Some(i) = reach(&backward).iter().position(|s| !s) {
            return bad(format!("entry unreachable from page {}", self.pages[i]));
        }
        Ok(())
    }

    fn graph(&self) -> Graph {
        let mut out = vec![Vec::new(); self.pages.len()];
        for &(a, b, w) in &self.edges {
            out[a].push((b, w));
        }
        Graph { out }
    }

    fn url(&self, path: &str) -> String {
        format!("https://{}{}", self.host, path)
    }
}

fn next_page<R: Rng>(g: &Graph, from: usize, rng: &mut R) -> usize {
    let total: f64 = g.out[from].iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(to, w) in &g.out[from] {
        if x < w {
            return to;
        }
        x -= w;
    }
    g.out[from].last().map(|(to, _)| *to).unwrap_or(from)
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// One user's events and ground truth, from its own seeded stream.
pub fn simulate_user(site: &SiteModel, index: usize) -> (Vec<Event>, SyntheticUser) {
    let g = site.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(site.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let id = format!("{}-{index:06}", site.id_prefix);
    let is_bot = rng.random::<f64>() < site.bot_fraction;
    let returning = rng.random::<f64>() < site.returning_fraction;
    let agent = if is_bot {
        BOT_AGENT
    } else {
        BROWSER_AGENTS[rng.random_range(0..BROWSER_AGENTS.len())]
    };
    let span_ms = (site.span_days * 86_400_000.0) as i64;
    let mut t = site.start_timestamp_ms + if span_ms > 0 { rng.random_range(0..span_ms) } else { 0 };
    let engagement = LogNormal::new(0.0, site.engagement_sigma).map(|d| d.sample(&mut rng)).unwrap_or(1.0);
    let dwell = LogNormal::new(site.dwell_median_seconds.ln(), site.dwell_sigma).expect("validated dwell parameters");
    let n_pages = if is_bot { 5 + rng.random_range(0..20) } else { 1 + poisson(site.pages_per_engagement * engagement, &mut rng) };
    let click_mean = site.click_rate * engagement.min(4.0);

    let mut events = Vec::new();
    let make = |ts: i64, ty: EventType, path: &str| {
        let mut e = Event::new(ts, id.clone(), ty).with_url(&site.url(path)).with_user_agent(agent);
        if returning {
            e.user_id = Some(format!("user-{index:06}"));
        }
        e
    };
    let mut page = site.entry;
    for i in 0..n_pages {
        if i > 0 {
            page = next_page(&g, page, &mut rng);
        }
        let path = &site.pages[page];
        events.push(make(t, EventType::Page, path));
        let seconds = if is_bot {
            0.5 + rng.random::<f64>()
        } else if rng.random::<f64>() < site.spike_probability {
            site.spike_seconds
        } else {
            dwell.sample(&mut rng)
        };
        let dwell_ms = ((seconds * 1000.0) as i64).max(1);
        let mut inner: Vec<(i64, EventType)> = Vec::new();
        let clicks = if is_bot { rng.random_range(0..3) } else { poisson(click_mean, &mut rng) };
        for _ in 0..clicks {
            inner.push((rng.random_range(1..=dwell_ms), EventType::Click));
        }
        for _ in 0..poisson(site.scroll_rate, &mut rng) {
            inner.push((rng.random_range(1..=dwell_ms), EventType::Scroll));
        }
        for _ in 0..poisson(site.log_rate, &mut rng) {
            inner.push((rng.random_range(1..=dwell_ms), EventType::Log));
        }
        inner.sort_by_key(|(dt, _)| *dt);
        for (dt, ty) in inner {
            events.push(make(t + dt, ty, path));
        }
        t += dwell_ms + 1;
    }
    let first = events[0].timestamp;
    let last = events[events.len() - 1].timestamp;
    let clicks = events.iter().filter(|e| e.event_type == EventType::Click).count();
    let time_on_site = (last - first) as f64 / 1000.0;
    let propensity = if is_bot { 0.0 } else { site.propensity.probability(clicks as f64, time_on_site) };
    let purchased = rng.random::<f64>() < propensity;
    if purchased {
        events.push(make(last + 1000 + rng.random_range(0..5000), EventType::Positive, CHECKOUT_PATH));
    }
    let user = SyntheticUser {
        anonymous_id: id,
        is_bot,
        clicks,
        time_on_site_seconds: time_on_site,
        propensity,
        purchased,
        first_timestamp: first,
        last_timestamp: last,
    };
    (events, user)
}

pub fn generate_sessions(site: &SiteModel) -> Result<SyntheticData, SynthError> {
    site.validate()?;
    let mut events = Vec::new();
    let mut users = Vec::with_capacity(site.n_users);
    for i in 0..site.n_users {
        let (ev, user) = simulate_user(site, i);
        events.extend(ev);
        users.push(user);
    }
    events.sort_by_key(|e| e.timestamp);
    Ok(SyntheticData { events, users })
}

/// Dwell samples from the site's dwell distribution (spike included).
pub fn sample_dwell(site: &SiteModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dwell = LogNormal::new(site.dwell_median_seconds.ln(), site.dwell_sigma).expect("valid dwell parameters");
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < site.spike_probability {
                site.spike_seconds
            } else {
                dwell.sample(&mut rng)
            }
        })
        .collect()
}

pub fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}
