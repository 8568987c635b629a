//! Daily opinion timelines from a classified corpus: topic rates, stance
//! fractions, smoothing, case-count overlay and export.

mod cases;
mod export;
mod figure;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cases::{load_case_counts, read_case_counts, CaseCounts};
pub use export::{export_timeline, import_timeline, DataFormat, ExportedFiles};
pub use figure::render_svg;

use crate::codebook::{Axis, Codebook, NOT_APPLICABLE};
use crate::sieve::{ClassifiedPost, StageOutput};
use crate::time::brussels_day;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no classified posts")]
    EmptyCorpus,
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("no {axis} labels on {topic} posts")]
    NoSupportLabels { topic: String, axis: Axis },
    #[error("smoothing window must be an odd number of days, got {0}")]
    BadWindow(usize),
    #[error("series {name:?}: {reason}")]
    BadSeries { name: String, reason: String },
    #[error("event marker on {0} has an empty caption")]
    EmptyCaption(NaiveDate),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unsupported format {got:?}; supported: {supported}")]
    UnsupportedFormat { got: String, supported: String },
    #[error("nothing to export")]
    NothingToExport,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub day: NaiveDate,
    pub value: f64,
}

/// A daily series with strictly increasing days and finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries")]
pub struct TimeSeries {
    pub name: String,
    pub unit: String,
    points: Vec<Point>,
}

#[derive(Deserialize)]
struct RawSeries {
    name: String,
    unit: String,
    points: Vec<Point>,
}

impl TryFrom<RawSeries> for TimeSeries {
    type Error = AnalyticsError;

    fn try_from(r: RawSeries) -> Result<Self, Self::Error> {
        TimeSeries::new(r.name, r.unit, r.points)
    }
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, points: Vec<Point>) -> Result<Self, AnalyticsError> {
        let name = name.into();
        let bad = |reason: String| AnalyticsError::BadSeries {
            name: name.clone(),
            reason,
        };
        if let Some(w) = points.windows(2).find(|w| w[0].day >= w[1].day) {
            return Err(bad(format!("day {} does not follow {}", w[1].day, w[0].day)));
        }
        if let Some(p) = points.iter().find(|p| !p.value.is_finite()) {
            return Err(bad(format!("non-finite value on {}", p.day)));
        }
        Ok(Self {
            name,
            unit: unit.into(),
            points,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value_on(&self, day: NaiveDate) -> Option<f64> {
        self.points
            .binary_search_by_key(&day, |p| p.day)
            .ok()
            .map(|i| self.points[i].value)
    }

    /// Points with `start <= day <= end`.
    pub fn restrict(&self, window: &DayWindow) -> TimeSeries {
        Self {
            name: self.name.clone(),
            unit: self.unit.clone(),
            points: self.points.iter().filter(|p| window.contains(p.day)).copied().collect(),
        }
    }
}

/// An inclusive day range; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

impl DayWindow {
    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start.is_none_or(|s| day >= s) && self.end.is_none_or(|e| day <= e)
    }
}

/// How post timestamps map to calendar days.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    #[default]
    Brussels,
    Utc,
}

impl Bucketing {
    pub fn day(self, post: &ClassifiedPost) -> NaiveDate {
        match self {
            Bucketing::Brussels => brussels_day(post.created_at),
            Bucketing::Utc => post.created_at.date_naive(),
        }
    }
}

fn check_topic(topic: &str, codebook: &Codebook) -> Result<(), AnalyticsError> {
    if codebook.allows(Axis::Topic, topic) {
        Ok(())
    } else {
        Err(AnalyticsError::UnknownTopic(topic.to_string()))
    }
}

/// Share of each day's relevant posts that carry `topic`. Days without
/// relevant posts are left out.
pub fn topic_rate_series(
    classified: &[ClassifiedPost],
    topic: &str,
    bucketing: Bucketing,
    codebook: &Codebook,
) -> Result<TimeSeries, AnalyticsError> {
    if classified.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    check_topic(topic, codebook)?;
    let mut days: BTreeMap<NaiveDate, (u64, u64)> = BTreeMap::new();
    for p in classified.iter().filter(|p| p.relevant) {
        let entry = days.entry(bucketing.day(p)).or_default();
        entry.1 += 1;
        entry.0 += u64::from(p.topic_label() == Some(topic));
    }
    let points = days
        .into_iter()
        .map(|(day, (hits, n))| Point {
            day,
            value: hits as f64 / n as f64,
        })
        .collect();
    TimeSeries::new(topic, "share of relevant posts", points)
}

fn support_output(p: &ClassifiedPost, axis: Axis) -> Option<&StageOutput> {
    match axis {
        Axis::MeasureSupport => p.measure_support.as_ref(),
        Axis::GovernmentSupport => p.government_support.as_ref(),
        _ => None,
    }
}

/// Per-day share of each `axis` label among the day's `topic` posts, one
/// series per label. Every series covers the same days, so the fractions sum
/// to one on each of them. With `drop_not_applicable`, posts labeled
/// not-applicable are left out of the denominator and get no series.
pub fn stance_fraction_series(
    classified: &[ClassifiedPost],
    topic: &str,
    axis: Axis,
    drop_not_applicable: bool,
    bucketing: Bucketing,
    codebook: &Codebook,
) -> Result<BTreeMap<String, TimeSeries>, AnalyticsError> {
    check_topic(topic, codebook)?;
    let labels: Vec<&String> = codebook
        .values(axis)
        .iter()
        .filter(|l| !(drop_not_applicable && l.as_str() == NOT_APPLICABLE))
        .collect();
    let mut days: BTreeMap<NaiveDate, BTreeMap<&str, u64>> = BTreeMap::new();
    let mut labeled = false;
    for p in classified.iter().filter(|p| p.topic_label() == Some(topic)) {
        let Some(out) = support_output(p, axis) else { continue };
        labeled = true;
        if drop_not_applicable && out.label == NOT_APPLICABLE {
            continue;
        }
        *days.entry(bucketing.day(p)).or_default().entry(out.label.as_str()).or_default() += 1;
    }
    if !labeled {
        return Err(AnalyticsError::NoSupportLabels {
            topic: topic.to_string(),
            axis,
        });
    }
    let mut out = BTreeMap::new();
    for label in labels {
        let points = days
            .iter()
            .map(|(day, counts)| {
                let total: u64 = counts.values().sum();
                Point {
                    day: *day,
                    value: counts.get(label.as_str()).copied().unwrap_or(0) as f64 / total as f64,
                }
            })
            .collect();
        out.insert(label.clone(), TimeSeries::new(label.as_str(), format!("share of {topic} posts"), points)?);
    }
    Ok(out)
}

/// Centered rolling mean over the present days within `window` calendar
/// days of each point; near the edges and around gaps the mean covers the
/// available points only.
pub fn smooth(series: &TimeSeries, window: usize) -> Result<TimeSeries, AnalyticsError> {
    if window == 0 || window % 2 == 0 {
        return Err(AnalyticsError::BadWindow(window));
    }
    if window == 1 {
        return Ok(series.clone());
    }
    let half = Duration::days((window / 2) as i64);
    let pts = series.points();
    let mut lo = 0;
    let mut hi = 0;
    let mut out = Vec::with_capacity(pts.len());
    for p in pts {
        while pts[lo].day < p.day - half {
            lo += 1;
        }
        while hi < pts.len() && pts[hi].day <= p.day + half {
            hi += 1;
        }
        let span = &pts[lo..hi];
        let mean = span.iter().map(|q| q.value).sum::<f64>() / span.len() as f64;
        out.push(Point { day: p.day, value: mean });
    }
    TimeSeries::new(series.name.clone(), series.unit.clone(), out)
}

/// A dated annotation drawn across all figure panels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMarker")]
pub struct EventMarker {
    pub day: NaiveDate,
    caption: String,
}

#[derive(Deserialize)]
struct RawMarker {
    day: NaiveDate,
    caption: String,
}

impl TryFrom<RawMarker> for EventMarker {
    type Error = AnalyticsError;

    fn try_from(r: RawMarker) -> Result<Self, Self::Error> {
        EventMarker::new(r.day, r.caption)
    }
}

impl EventMarker {
    pub fn new(day: NaiveDate, caption: impl Into<String>) -> Result<Self, AnalyticsError> {
        let caption = caption.into();
        if caption.trim().is_empty() {
            return Err(AnalyticsError::EmptyCaption(day));
        }
        Ok(Self { day, caption })
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }
}

/// The national lockdown with a country-wide night curfew.
pub fn default_markers() -> Vec<EventMarker> {
    vec![EventMarker::new(NaiveDate::from_ymd_opt(2020, 11, 2).expect("valid date"), "national lockdown and curfew").expect("nonempty")]
}

/// Figure panel, top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Panel {
    Cases,
    TopicRate,
    Stance,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Cases, Panel::TopicRate, Panel::Stance];

    pub fn as_str(self) -> &'static str {
        match self {
            Panel::Cases => "cases",
            Panel::TopicRate => "topic_rate",
            Panel::Stance => "stance",
        }
    }

    pub fn parse(s: &str) -> Option<Panel> {
        Panel::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

/// A series placed on a panel; `window` is its smoothing window (1 = raw).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub panel: Panel,
    pub window: usize,
    pub series: TimeSeries,
}

/// Everything a timeline figure is drawn from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineData {
    pub series: Vec<SeriesEntry>,
    pub markers: Vec<EventMarker>,
}

impl TimelineData {
    pub fn get(&self, panel: Panel, name: &str, window: usize) -> Option<&TimeSeries> {
        self.series
            .iter()
            .find(|e| e.panel == panel && e.window == window && e.series.name == name)
            .map(|e| &e.series)
    }

    pub fn panel(&self, panel: Panel, window: usize) -> impl Iterator<Item = &TimeSeries> {
        self.series
            .iter()
            .filter(move |e| e.panel == panel && e.window == window)
            .map(|e| &e.series)
    }
}

pub const DEFAULT_SMOOTHING: usize = 7;

fn default_topic() -> String {
    "curfew".into()
}

fn default_smoothing() -> usize {
    DEFAULT_SMOOTHING
}

fn default_axis() -> Axis {
    Axis::MeasureSupport
}

/// A timeline request, shared by the command line and the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineQuery {
    #[serde(default = "default_topic")]
    pub topic: String,
    #[serde(default)]
    pub window: DayWindow,
    #[serde(default = "default_smoothing")]
    pub smoothing: usize,
    #[serde(default = "default_axis")]
    pub axis: Axis,
    #[serde(default)]
    pub drop_not_applicable: bool,
    #[serde(default)]
    pub bucketing: Bucketing,
}

impl Default for TimelineQuery {
    fn default() -> Self {
        Self {
            topic: default_topic(),
            window: DayWindow::default(),
            smoothing: DEFAULT_SMOOTHING,
            axis: default_axis(),
            drop_not_applicable: false,
            bucketing: Bucketing::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePayload {
    pub query: TimelineQuery,
    #[serde(flatten)]
    pub data: TimelineData,
}

/// Builds the raw series for `query` (and smoothed copies when the window
/// exceeds one day), then restricts them to the query's day window.
/// Smoothing happens before restriction, so values near the window edges do
/// not depend on the window.
pub fn build_timeline(
    classified: &[ClassifiedPost],
    query: &TimelineQuery,
    cases: Option<&CaseCounts>,
    markers: &[EventMarker],
    codebook: &Codebook,
) -> Result<TimelinePayload, AnalyticsError> {
    if query.smoothing == 0 || query.smoothing % 2 == 0 {
        return Err(AnalyticsError::BadWindow(query.smoothing));
    }
    if !matches!(query.axis, Axis::MeasureSupport | Axis::GovernmentSupport) {
        return Err(AnalyticsError::NoSupportLabels {
            topic: query.topic.clone(),
            axis: query.axis,
        });
    }
    let mut raw: Vec<(Panel, TimeSeries)> = Vec::new();
    if let Some(c) = cases {
        raw.push((Panel::Cases, c.to_series()));
    }
    raw.push((Panel::TopicRate, topic_rate_series(classified, &query.topic, query.bucketing, codebook)?));
    let stances = stance_fraction_series(classified, &query.topic, query.axis, query.drop_not_applicable, query.bucketing, codebook)?;
    let order = codebook.values(query.axis);
    for label in order {
        if let Some(s) = stances.get(label) {
            raw.push((Panel::Stance, s.clone()));
        }
    }
    let mut series = Vec::new();
    for (panel, s) in &raw {
        series.push(SeriesEntry {
            panel: *panel,
            window: 1,
            series: s.restrict(&query.window),
        });
    }
    if query.smoothing > 1 {
        for (panel, s) in &raw {
            series.push(SeriesEntry {
                panel: *panel,
                window: query.smoothing,
                series: smooth(s, query.smoothing)?.restrict(&query.window),
            });
        }
    }
    let markers = markers.iter().filter(|m| query.window.contains(m.day)).cloned().collect();
    Ok(TimelinePayload {
        query: query.clone(),
        data: TimelineData { series, markers },
    })
}
