//! Offline evaluation: ranking quality, lift by prediction segment,
//! prediction histograms and per-cohort calibration.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_curve, ece, CalibrationCurve, CalibrationError, DEFAULT_ECE_BINS, DEFAULT_MIN_POSITIVES};
use crate::examples::stat_keys;

pub const REPORT_FORMAT: &str = "clickpred-eval-report";
pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_SEGMENTS: usize = 5;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("length mismatch: {0} predictions, {1} labels")]
    Length(usize, usize),
    #[error("invalid predicate {input:?}: {reason}")]
    Predicate { input: String, reason: String },
    #[error("cohort {0:?} selects no examples")]
    EmptyCohort(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Area under the ROC curve from average ranks; ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Metric("NaN prediction".into()));
    }
    let n_pos = labels.iter().filter(|y| **y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Metric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // twice the rank sum of positives, with tied groups sharing (first + last) ranks
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|k| labels[**k] == 1).count() as u64;
        twice_rank_sum += shared * pos_in_group;
        i = j + 1;
    }
    // 2U = 2 * (rank sum - P(P+1)/2) = wins * 2 + ties
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsSegment {
    pub bucket_index: usize,
    pub count: usize,
    pub positive_rate: f64,
    pub odds_ratio: f64,
    pub min_prediction: f64,
    pub max_prediction: f64,
}

/// Splits predictions sorted high to low into `n_segments` contiguous
/// buckets of near-equal size, the first `n % n_segments` one larger.
pub fn odds_segments(scores: &[f64], labels: &[u8], n_segments: usize) -> Result<Vec<OddsSegment>, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    if n_segments == 0 || scores.len() < n_segments {
        return Err(EvalError::Metric(format!("{} predictions for {n_segments} segments", scores.len())));
    }
    let total_pos = labels.iter().filter(|y| **y == 1).count();
    if total_pos == 0 {
        return Err(EvalError::Metric("zero base rate".into()));
    }
    let base = total_pos as f64 / scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let (size, extra) = (scores.len() / n_segments, scores.len() % n_segments);
    let mut out = Vec::with_capacity(n_segments);
    let mut start = 0;
    for k in 0..n_segments {
        let len = size + usize::from(k < extra);
        let idx = &order[start..start + len];
        start += len;
        let pos = idx.iter().filter(|i| labels[**i] == 1).count();
        let rate = pos as f64 / len as f64;
        out.push(OddsSegment {
            bucket_index: k,
            count: len,
            positive_rate: rate,
            odds_ratio: rate / base,
            min_prediction: scores[*idx.last().expect("non-empty segment")],
            max_prediction: scores[idx[0]],
        });
    }
    Ok(out)
}

/// Renders a ratio the way segment charts label it, e.g. `3.39×`.
pub fn format_odds(ratio: f64) -> String {
    format!("{ratio:.2}×")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.bins as f64
    }
}

/// Equal-width histogram over `[0, 1]`; the last bin is closed on the right.
pub fn prediction_distribution(scores: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    for s in scores {
        let i = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { bins, counts }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl Cmp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Const(bool),
    Compare { key: String, op: Cmp, value: f64 },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

/// Boolean filter over instance stats, e.g.
/// `click_count > 10 AND time_on_site > 60`.
///
/// Grammar: `or := and (OR and)*`, `and := unary (AND unary)*`,
/// `unary := NOT unary | '(' or ')' | true | false | key op number`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    source: String,
    expr: Expr,
}

fn canonical_key(name: &str) -> String {
    match name {
        "time_on_site" => stat_keys::TIME_ON_SITE_SECONDS.to_string(),
        "clicks" => stat_keys::CLICK_COUNT.to_string(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Num(f64),
    Op(Cmp),
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Token>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else if "<>=!".contains(c) {
            let two = chars.get(i + 1) == Some(&'=');
            let op = match (c, two) {
                ('>', false) => Cmp::Gt,
                ('>', true) => Cmp::Ge,
                ('<', false) => Cmp::Lt,
                ('<', true) => Cmp::Le,
                ('=', _) => Cmp::Eq,
                ('!', true) => Cmp::Ne,
                _ => return Err(format!("unexpected {c:?}")),
            };
            i += if two { 2 } else { 1 };
            out.push(Token::Op(op));
        } else if c.is_ascii_digit() || c == '.' || c == '-' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '+' || chars[i] == '-') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token::Num(text.parse().map_err(|_| format!("bad number {text:?}"))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(format!("unexpected {c:?}"));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn or(&mut self) -> Result<Expr, String> {
        let mut lhs = self.and()?;
        while self.peek_keyword("or") {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        while self.peek_keyword("and") {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        let tok = self.tokens.get(self.pos).cloned().ok_or("unexpected end of input")?;
        self.pos += 1;
        match tok {
            Token::LParen => {
                let e = self.or()?;
                match self.tokens.get(self.pos) {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err("missing ')'".into()),
                }
            }
            Token::Ident(s) if s.eq_ignore_ascii_case("not") => Ok(Expr::Not(Box::new(self.unary()?))),
            Token::Ident(s) if s.eq_ignore_ascii_case("true") => Ok(Expr::Const(true)),
            Token::Ident(s) if s.eq_ignore_ascii_case("false") => Ok(Expr::Const(false)),
            Token::Ident(s) if s.eq_ignore_ascii_case("and") || s.eq_ignore_ascii_case("or") => {
                Err(format!("unexpected {s}"))
            }
            Token::Ident(key) => {
                let op = match self.tokens.get(self.pos) {
                    Some(Token::Op(op)) => *op,
                    _ => return Err(format!("expected comparison after {key}")),
                };
                let value = match self.tokens.get(self.pos + 1) {
                    Some(Token::Num(v)) => *v,
                    _ => return Err(format!("expected number after {key} {}", op.symbol())),
                };
                self.pos += 2;
                Ok(Expr::Compare {
                    key: canonical_key(&key),
                    op,
                    value,
                })
            }
            other => Err(format!("unexpected {other:?}")),
        }
    }
}

impl Predicate {
    pub fn parse(input: &str) -> Result<Self, EvalError> {
        let err = |reason: String| EvalError::Predicate {
            input: input.to_string(),
            reason,
        };
        let tokens = tokenize(input).map_err(err)?;
        if tokens.is_empty() {
            return Err(err("empty predicate".into()));
        }
        let mut p = Parser { tokens, pos: 0 };
        let expr = p.or().map_err(err)?;
        if p.pos != p.tokens.len() {
            return Err(err(format!("trailing input at token {}", p.pos)));
        }
        Ok(Predicate {
            source: input.trim().to_string(),
            expr,
        })
    }

    pub fn always() -> Self {
        Predicate {
            source: "true".into(),
            expr: Expr::Const(true),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Stat keys referenced, after alias resolution.
    pub fn keys(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Const(_) => {}
                Expr::Compare { key, .. } => {
                    if !out.contains(key) {
                        out.push(key.clone())
                    }
                }
                Expr::And(a, b) | Expr::Or(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Expr::Not(a) => walk(a, out),
            }
        }
        let mut out = Vec::new();
        walk(&self.expr, &mut out);
        out
    }

    /// Missing keys make the whole predicate an error rather than silently false.
    pub fn eval(&self, stats: &BTreeMap<String, f64>) -> Result<bool, EvalError> {
        fn go(e: &Expr, stats: &BTreeMap<String, f64>) -> Result<bool, String> {
            Ok(match e {
                Expr::Const(b) => *b,
                Expr::Compare { key, op, value } => {
                    let v = stats.get(key).ok_or_else(|| format!("unknown stat {key:?}"))?;
                    op.holds(*v, *value)
                }
                Expr::And(a, b) => go(a, stats)? && go(b, stats)?,
                Expr::Or(a, b) => go(a, stats)? || go(b, stats)?,
                Expr::Not(a) => !go(a, stats)?,
            })
        }
        go(&self.expr, stats).map_err(|reason| EvalError::Predicate {
            input: self.source.clone(),
            reason,
        })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// One evaluated example: its stats, model score and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub stats: BTreeMap<String, f64>,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub predicate: String,
    pub count: usize,
    pub positive_rate: f64,
    pub calibration_curve: CalibrationCurve,
    pub top_decile_positive_rate: f64,
}

/// Positive rate among the top `ceil(n/10)` scores (ties in input order).
pub fn top_decile_positive_rate(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Metric("no predictions".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let k = scores.len().div_ceil(10);
    Ok(order[..k].iter().filter(|i| labels[**i] == 1).count() as f64 / k as f64)
}

fn summarize(predicate: String, scores: &[f64], labels: &[u8], min_positives: usize) -> Result<CohortReport, EvalError> {
    Ok(CohortReport {
        count: scores.len(),
        positive_rate: labels.iter().filter(|y| **y == 1).count() as f64 / scores.len() as f64,
        calibration_curve: calibration_curve(scores, labels, min_positives)?,
        top_decile_positive_rate: top_decile_positive_rate(scores, labels)?,
        predicate,
    })
}

pub fn cohort_report(data: &[Scored], predicate: &Predicate, min_positives: usize) -> Result<CohortReport, EvalError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for d in data {
        if predicate.eval(&d.stats)? {
            scores.push(d.score);
            labels.push(d.label);
        }
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyCohort(predicate.source().to_string()));
    }
    summarize(predicate.source().to_string(), &scores, &labels, min_positives)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub auc: f64,
    pub ece: f64,
    pub calibrated: bool,
    pub overall: CohortReport,
    pub odds_segments: Vec<OddsSegment>,
    pub prediction_histogram: Histogram,
    pub cohort_reports: BTreeMap<String, CohortReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub ece_bins: usize,
    pub min_positives: usize,
    pub segments: usize,
    pub histogram_bins: usize,
    pub cohorts: Vec<(String, Predicate)>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            ece_bins: DEFAULT_ECE_BINS,
            min_positives: DEFAULT_MIN_POSITIVES,
            segments: DEFAULT_SEGMENTS,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            cohorts: Vec::new(),
        }
    }
}

/// `probs` are the reported two-class probabilities (calibrated or not).
pub fn build_report(data: &[Scored], probs: &[[f64; 2]], calibrated: bool, opts: &ReportOptions) -> Result<EvalReport, EvalError> {
    if data.len() != probs.len() {
        return Err(EvalError::Length(data.len(), probs.len()));
    }
    let scores: Vec<f64> = data.iter().map(|d| d.score).collect();
    let labels: Vec<u8> = data.iter().map(|d| d.label).collect();
    let mut cohort_reports = BTreeMap::new();
    for (name, p) in &opts.cohorts {
        cohort_reports.insert(name.clone(), cohort_report(data, p, opts.min_positives)?);
    }
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        n: data.len(),
        auc: auc(&scores, &labels)?,
        ece: ece(probs, &labels, opts.ece_bins)?,
        calibrated,
        overall: summarize("true".into(), &scores, &labels, opts.min_positives)?,
        odds_segments: odds_segments(&scores, &labels, opts.segments)?,
        prediction_histogram: prediction_distribution(&scores, opts.histogram_bins),
        cohort_reports,
    })
}

fn write_series(path: &Path, header: (&str, &str), rows: impl IntoIterator<Item = (f64, f64)>) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}\t{}", header.0, header.1)?;
    for (x, y) in rows {
        writeln!(f, "{x}\t{y}")?;
    }
    f.flush()?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        let report: EvalReport = serde_json::from_str(s)?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(EvalError::Metric(format!("unsupported report {} v{}", report.format, report.version)));
        }
        Ok(report)
    }

    /// Writes `report.json` plus two-column TSV series; returns the paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?)?;
        written.push(json);

        written.extend(write_cohort_series(dir, &self.overall, &self.cohort_reports)?);
        let p = dir.join("odds_segments.tsv");
        write_series(&p, ("segment", "odds_ratio"), self.odds_segments.iter().map(|s| ((s.bucket_index + 1) as f64, s.odds_ratio)))?;
        written.push(p);
        let p = dir.join("prediction_histogram.tsv");
        let h = &self.prediction_histogram;
        write_series(&p, ("bin_center", "count"), (0..h.bins).map(|i| (h.bin_center(i), h.counts[i] as f64)))?;
        written.push(p);
        Ok(written)
    }
}

/// Calibration-curve series: `calibration_curve.tsv` for all users and
/// `cohort_{name}_calibration.tsv` per cohort, `conf<TAB>actual` per bucket.
pub fn write_cohort_series(
    dir: &Path,
    overall: &CohortReport,
    cohorts: &BTreeMap<String, CohortReport>,
) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let curve = |c: &CalibrationCurve| c.buckets.iter().map(|b| (b.conf, b.actual)).collect::<Vec<_>>();
    let mut written = Vec::new();
    let p = dir.join("calibration_curve.tsv");
    write_series(&p, ("conf", "actual"), curve(&overall.calibration_curve))?;
    written.push(p);
    for (name, c) in cohorts {
        let p = dir.join(format!("cohort_{}_calibration.tsv", file_stem(name)));
        write_series(&p, ("conf", "actual"), curve(&c.calibration_curve))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(s: &[f64], y: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(EvalError::Metric(_))));
    }

    #[test]
    fn odds_uniform_and_partition() {
        let s = vec![0.5; 10];
        let y = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let seg = odds_segments(&s, &y, 5).unwrap();
        assert!(seg.iter().all(|g| g.odds_ratio == 1.0));

        let s: Vec<f64> = (0..13).map(|i| i as f64).collect();
        let y: Vec<u8> = (0..13).map(|i| u8::from(i % 3 == 0)).collect();
        let seg = odds_segments(&s, &y, 5).unwrap();
        assert_eq!(seg.iter().map(|g| g.count).collect::<Vec<_>>(), vec![3, 3, 3, 2, 2]);
        assert_eq!(seg[0].max_prediction, 12.0);
        assert!(matches!(odds_segments(&[0.2; 5], &[0; 5], 5), Err(EvalError::Metric(_))));
        assert!(odds_segments(&[0.2; 4], &[1; 4], 5).is_err());
        assert_eq!(format_odds(3.3912), "3.39×");
    }

    #[test]
    fn histogram_cases() {
        let h = prediction_distribution(&[0.5; 7], 20);
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(prediction_distribution(&[], 20).counts, vec![0; 20]);
        assert_eq!(prediction_distribution(&[1.0, 0.0], 4).counts, vec![1, 0, 0, 1]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let h = prediction_distribution(&u, 20);
        let sigma = (20_000.0f64 * 0.05 * 0.95).sqrt();
        for c in &h.counts {
            assert!((*c as f64 - 1000.0).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn predicate_parsing() {
        let p = Predicate::parse("click_count > 10 AND time_on_site > 60").unwrap();
        assert_eq!(p.keys(), vec!["click_count".to_string(), "time_on_site_seconds".to_string()]);
        let stats = |c: f64, t: f64| BTreeMap::from([("click_count".to_string(), c), ("time_on_site_seconds".to_string(), t)]);
        assert!(p.eval(&stats(11.0, 61.0)).unwrap());
        assert!(!p.eval(&stats(10.0, 61.0)).unwrap());
        let q = Predicate::parse("not (clicks <= 2 or time_on_site == 0)").unwrap();
        assert!(q.eval(&stats(3.0, 1.0)).unwrap());
        assert!(!q.eval(&stats(3.0, 0.0)).unwrap());
        assert!(Predicate::parse("TRUE").unwrap().eval(&BTreeMap::new()).unwrap());
        for bad in ["", "click_count >", "a > 1 AND", "(a > 1", "a ~ 2", "a > 1 b"] {
            assert!(Predicate::parse(bad).is_err(), "{bad}");
        }
        assert!(Predicate::parse("nope > 1").unwrap().eval(&stats(1.0, 1.0)).is_err());
    }

    fn scored(n: usize, seed: u64) -> Vec<Scored> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let score: f64 = rng.random();
                Scored {
                    stats: BTreeMap::from([("click_count".to_string(), rng.random_range(0..20) as f64)]),
                    label: u8::from(rng.random::<f64>() < score),
                    score,
                }
            })
            .collect()
    }

    #[test]
    fn true_cohort_matches_overall() {
        let data = scored(3000, 2);
        let probs: Vec<[f64; 2]> = data.iter().map(|d| [1.0 - d.score, d.score]).collect();
        let opts = ReportOptions {
            cohorts: vec![("all".into(), Predicate::always()), ("busy".into(), Predicate::parse("click_count > 10").unwrap())],
            ..Default::default()
        };
        let report = build_report(&data, &probs, false, &opts).unwrap();
        assert_eq!(report.cohort_reports["all"], report.overall);
        assert!(report.cohort_reports["busy"].count < 3000);
        assert!(matches!(
            cohort_report(&data, &Predicate::parse("click_count > 100").unwrap(), 100),
            Err(EvalError::EmptyCohort(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let files = report.write_to(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let back = EvalReport::from_json(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(back, report);
        let tsv = std::fs::read_to_string(dir.path().join("odds_segments.tsv")).unwrap();
        assert_eq!(tsv.lines().next(), Some("segment\todds_ratio"));
        assert_eq!(tsv.lines().count(), 6);
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(raw in prop::collection::vec((0u8..20, 0u8..2), 2..500)) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| f64::from(*v) / 20.0).collect();
            let y: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert_eq!(auc(&s, &y).unwrap(), brute_auc(&s, &y));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&t, &y).unwrap(), auc(&s, &y).unwrap());
        }

        #[test]
        fn segments_partition(s in prop::collection::vec(0.0f64..1.0, 5..300), seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<u8> = s.iter().map(|_| rng.random_range(0..2u8)).collect();
            y[0] = 1;
            let seg = odds_segments(&s, &y, k).unwrap();
            prop_assert_eq!(seg.iter().map(|g| g.count).sum::<usize>(), s.len());
            let pos: f64 = seg.iter().map(|g| g.count as f64 * g.positive_rate).sum();
            let total = y.iter().filter(|v| **v == 1).count() as f64;
            prop_assert!((pos - total).abs() < 1e-9);
            let sizes: Vec<usize> = seg.iter().map(|g| g.count).collect();
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
        }
    }
}
