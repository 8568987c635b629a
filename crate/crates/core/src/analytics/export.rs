use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use super::{render_svg, AnalyticsError, EventMarker, Panel, Point, SeriesEntry, TimeSeries, TimelineData};

/// Data file format. The figure is always SVG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Tsv,
    Json,
}

impl DataFormat {
    pub const SUPPORTED: &'static str = "tsv, json";

    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Tsv => "tsv",
            DataFormat::Json => "json",
        }
    }
}

impl FromStr for DataFormat {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(DataFormat::Tsv),
            "json" => Ok(DataFormat::Json),
            _ => Err(AnalyticsError::UnsupportedFormat {
                got: s.to_string(),
                supported: Self::SUPPORTED.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub data: PathBuf,
    pub figure: PathBuf,
}

const MAGIC: &str = "# timeline-data 1";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

/// Columnar text: a `[series]` table declaring each series, a `[points]`
/// table with one row per series and day, and a `[markers]` table.
pub fn to_tsv(data: &TimelineData) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    out.push_str("[series]\nid\tpanel\twindow\tname\tunit\tpoints\n");
    for (i, e) in data.series.iter().enumerate() {
        writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}\t{}",
            e.panel.as_str(),
            e.window,
            escape(&e.series.name),
            escape(&e.series.unit),
            e.series.len()
        )
        .unwrap();
    }
    out.push_str("[points]\nid\tday\tvalue\n");
    for (i, e) in data.series.iter().enumerate() {
        for p in e.series.points() {
            writeln!(out, "{i}\t{}\t{}", p.day, p.value).unwrap();
        }
    }
    out.push_str("[markers]\nday\tcaption\n");
    for m in &data.markers {
        writeln!(out, "{}\t{}", m.day, escape(m.caption())).unwrap();
    }
    out
}

pub fn from_tsv(src: &str) -> Result<TimelineData, AnalyticsError> {
    let err = |line: usize, reason: String| AnalyticsError::Malformed { line, reason };
    let mut lines = src.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(err(1, "not a timeline data file".into())),
    }
    struct Decl {
        panel: Panel,
        window: usize,
        name: String,
        unit: String,
        count: usize,
        points: Vec<Point>,
    }
    let mut decls: Vec<Decl> = Vec::new();
    let mut markers = Vec::new();
    let mut section = "";
    let mut expect_header = false;
    for (n, line) in lines {
        if line.starts_with('[') {
            section = match line {
                "[series]" | "[points]" | "[markers]" => line,
                _ => return Err(err(n, format!("unknown section {line}"))),
            };
            expect_header = true;
            continue;
        }
        if expect_header {
            expect_header = false;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        match (section, cols.as_slice()) {
            ("[series]", [id, panel, window, name, unit, count]) => {
                if id.parse::<usize>().ok() != Some(decls.len()) {
                    return Err(err(n, format!("series id {id} out of order")));
                }
                decls.push(Decl {
                    panel: Panel::parse(panel).ok_or_else(|| err(n, format!("unknown panel {panel}")))?,
                    window: window.parse().map_err(|_| err(n, format!("bad window {window}")))?,
                    name: unescape(name).map_err(|e| err(n, e))?,
                    unit: unescape(unit).map_err(|e| err(n, e))?,
                    count: count.parse().map_err(|_| err(n, format!("bad point count {count}")))?,
                    points: Vec::new(),
                });
            }
            ("[points]", [id, day, value]) => {
                let decl = id
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| decls.get_mut(i))
                    .ok_or_else(|| err(n, format!("undeclared series {id}")))?;
                decl.points.push(Point {
                    day: day.parse().map_err(|_| err(n, format!("bad day {day}")))?,
                    value: value.parse().map_err(|_| err(n, format!("bad value {value}")))?,
                });
            }
            ("[markers]", [day, caption]) => {
                let day: NaiveDate = day.parse().map_err(|_| err(n, format!("bad day {day}")))?;
                markers.push(EventMarker::new(day, unescape(caption).map_err(|e| err(n, e))?).map_err(|e| err(n, e.to_string()))?);
            }
            _ => return Err(err(n, format!("unexpected row in section {section:?}"))),
        }
    }
    let mut series = Vec::with_capacity(decls.len());
    for d in decls {
        if d.points.len() != d.count {
            return Err(err(0, format!("series {:?} declares {} points, has {}", d.name, d.count, d.points.len())));
        }
        series.push(SeriesEntry {
            panel: d.panel,
            window: d.window,
            series: TimeSeries::new(d.name, d.unit, d.points)?,
        });
    }
    Ok(TimelineData { series, markers })
}

/// Writes `<base>.<format>` with all series and markers and `<base>.svg`
/// with the three-panel figure.
pub fn export_timeline(data: &TimelineData, base: &Path, format: DataFormat) -> Result<ExportedFiles, AnalyticsError> {
    if data.series.is_empty() {
        return Err(AnalyticsError::NothingToExport);
    }
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let data_path = base.with_extension(format.extension());
    let text = match format {
        DataFormat::Tsv => to_tsv(data),
        DataFormat::Json => serde_json::to_string_pretty(data).expect("timeline serializes"),
    };
    fs::write(&data_path, text)?;
    let figure = base.with_extension("svg");
    fs::write(&figure, render_svg(data))?;
    Ok(ExportedFiles { data: data_path, figure })
}

/// Reads a data file written by [`export_timeline`].
pub fn import_timeline(path: &Path) -> Result<TimelineData, AnalyticsError> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| AnalyticsError::Malformed {
            line: e.line(),
            reason: e.to_string(),
        })
    } else {
        from_tsv(&text)
    }
}
